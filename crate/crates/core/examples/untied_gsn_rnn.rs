//! Untied GSN run as a recurrent network on small bouncing-balls videos.
//! Prints next-frame MSE against the copy-last baseline and the
//! cross-entropy of predictions up to the walkback depth.

use gsn_seq::harness::{evaluate_bce, evaluate_mse, preset, train, CopyLast};
use gsn_seq::Result;

pub fn run_example(epochs: usize) -> Result<(f64, f64)> {
    let mut cfg = preset("balls/untied_gsn").expect("preset");
    cfg.layers = vec![40, 40];
    cfg.dataset.balls.resolution = 8;
    cfg.dataset.balls.frames = 40;
    cfg.dataset.videos_per_epoch = 10;
    cfg.dataset.test_videos = 4;
    cfg.subsequence_length = 20;
    cfg.subsequence_stride = 10;
    cfg.noise.salt_pepper_p = 0.05;
    cfg.noise.gauss_sigma = 0.1;
    cfg.epochs = epochs;
    let t = train(&cfg, None)?;
    let seqs = t.data.test_sequences()?;
    let mse = evaluate_mse(t.model.predictor().as_mut(), &seqs, None, cfg.batch_size)?;
    let naive = evaluate_mse(&mut CopyLast, &seqs, None, cfg.batch_size)?;
    let horizons: Vec<usize> = (1..=cfg.walkback.k).collect();
    let bce = evaluate_bce(t.model.predictor().as_mut(), &seqs, &horizons, cfg.batch_size)?;
    println!("next-frame MSE {mse:.5}  copy-last {naive:.5}");
    for (h, b) in horizons.iter().zip(bce) {
        println!("horizon {h}  BCE {b:.4}");
    }
    Ok((mse, naive))
}

#[allow(dead_code)]
fn main() {
    run_example(5).expect("untied gsn example");
}
