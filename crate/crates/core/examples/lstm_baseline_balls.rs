//! LSTM next-frame baseline on bouncing balls, compared with copying the last
//! frame.

use gsn_seq::harness::{evaluate_mse, preset, train, CopyLast};
use gsn_seq::Result;

pub fn run_example(epochs: usize) -> Result<(f64, f64)> {
    let mut cfg = preset("balls/lstm").expect("preset");
    cfg.layers = vec![40, 40];
    cfg.dataset.balls.resolution = 8;
    cfg.dataset.balls.frames = 40;
    cfg.dataset.videos_per_epoch = 20;
    cfg.dataset.test_videos = 4;
    cfg.subsequence_length = 20;
    cfg.subsequence_stride = 10;
    cfg.optimizer.learning_rate = 0.01;
    cfg.clip = Some(gsn_seq::nn::GradClipConfig { max_l2_norm: 1.0 });
    cfg.epochs = epochs;
    let t = train(&cfg, None)?;
    let seqs = t.data.test_sequences()?;
    let mse = t.metrics.last("test", "mse").expect("test mse");
    let naive = evaluate_mse(&mut CopyLast, &seqs, None, cfg.batch_size)?;
    println!("LSTM next-frame MSE {mse:.5}  copy-last {naive:.5}");
    Ok((mse, naive))
}

#[allow(dead_code)]
fn main() {
    run_example(10).expect("lstm baseline example");
}
