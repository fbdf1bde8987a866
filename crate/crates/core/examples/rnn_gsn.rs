//! RNN-GSN: an LSTM reads GSN hidden states and predicts the next frame's
//! hiddens, which the GSN decodes. Trained on small bouncing-balls videos.

use gsn_seq::harness::{preset, train};
use gsn_seq::Result;

pub fn run_example(epochs: usize) -> Result<f64> {
    let mut cfg = preset("balls/rnn_gsn").expect("preset");
    cfg.layers = vec![30, 30];
    cfg.lstm_hidden = 40;
    cfg.dataset.balls.resolution = 8;
    cfg.dataset.balls.frames = 40;
    cfg.dataset.videos_per_epoch = 10;
    cfg.dataset.test_videos = 4;
    cfg.subsequence_length = 20;
    cfg.subsequence_stride = 10;
    cfg.epochs = epochs;
    let t = train(&cfg, None)?;
    let rec = t.metrics.series("train", "reconstruction");
    let pred = t.metrics.series("train", "prediction");
    for e in 0..rec.len() {
        println!("epoch {:2}  reconstruction {:.4}  prediction {:.4}", e + 1, rec[e], pred[e]);
    }
    let mse = t.metrics.last("test", "mse").expect("test mse");
    println!("test next-frame MSE {mse:.5}");
    Ok(mse)
}

#[allow(dead_code)]
fn main() {
    run_example(5).expect("rnn-gsn example");
}
