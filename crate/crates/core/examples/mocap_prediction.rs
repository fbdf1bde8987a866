//! Next-frame prediction of 49 motion-capture channels with an untied GSN.
//! Error is reported in original units and on the standardised scale.

use gsn_seq::harness::{evaluate_mse, preset, train, CopyLast};
use gsn_seq::Result;

pub fn run_example(epochs: usize) -> Result<(f64, f64)> {
    let mut cfg = preset("mocap/untied_gsn").expect("preset");
    cfg.layers = vec![32, 32];
    cfg.dataset.mocap_frames = 600;
    cfg.subsequence_length = 30;
    cfg.subsequence_stride = 10;
    cfg.epochs = epochs;
    let t = train(&cfg, None)?;
    let seqs = t.data.test_sequences()?;
    let units = t.data.original_units.as_ref();
    let mse = t.metrics.last("test", "mse").expect("test mse");
    let z = t.metrics.last("test", "mse_standardized").expect("standardised mse");
    let naive = evaluate_mse(&mut CopyLast, &seqs, units, cfg.batch_size)?;
    println!("MSE {mse:.5} (standardised {z:.4})  copy-last {naive:.5}");
    Ok((mse, naive))
}

#[allow(dead_code)]
fn main() {
    run_example(10).expect("mocap example");
}
