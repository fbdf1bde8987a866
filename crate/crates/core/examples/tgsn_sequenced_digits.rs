//! Temporal GSN on a stream of digit images that cycles 0, 1, ..., 9. Scores
//! the predicted next digit with binary cross-entropy.

use gsn_seq::harness::{preset, train};
use gsn_seq::Result;

pub fn run_example(epochs: usize) -> Result<Vec<f64>> {
    let mut cfg = preset("tgsn-mnist").expect("preset");
    cfg.layers = vec![60, 60];
    cfg.dataset.per_class = 20;
    cfg.dataset.image_side = 12;
    cfg.dataset.test_cycles = 4;
    cfg.batch_size = 10;
    cfg.epochs = epochs;
    let t = train(&cfg, None)?;
    let bce = t.metrics.series("test", "bce");
    let gate = t.metrics.series("train", "gate");
    for (e, (b, g)) in bce.iter().zip(&gate).enumerate() {
        println!("epoch {:2}  predicted-next BCE {b:.4}  gate {}", e + 1, if *g > 0.0 { "open" } else { "closed" });
    }
    Ok(bce)
}

#[allow(dead_code)]
fn main() {
    run_example(8).expect("tgsn example");
}
