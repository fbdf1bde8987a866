//! Two-level sequence encoder network: a second GSN models the first
//! level's hidden states, and its LSTM drives the prediction.

use gsn_seq::harness::{preset, train};
use gsn_seq::Result;

pub fn run_example(epochs: usize) -> Result<f64> {
    let mut cfg = preset("balls/sen").expect("preset");
    cfg.layers = vec![30, 30];
    cfg.lstm_hidden = 30;
    cfg.levels = 2;
    cfg.dataset.balls.resolution = 8;
    cfg.dataset.balls.frames = 40;
    cfg.dataset.videos_per_epoch = 10;
    cfg.dataset.test_videos = 4;
    cfg.subsequence_length = 20;
    cfg.subsequence_stride = 10;
    cfg.epochs = epochs;
    let t = train(&cfg, None)?;
    for (e, p) in t.metrics.series("train", "prediction").iter().enumerate() {
        println!("epoch {:2}  prediction loss {p:.4}", e + 1);
    }
    let mse = t.metrics.last("test", "mse").expect("test mse");
    println!("test next-frame MSE {mse:.5}");
    Ok(mse)
}

#[allow(dead_code)]
fn main() {
    run_example(5).expect("sequence encoder example");
}
