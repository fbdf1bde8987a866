//! Trains for two epochs, checkpoints, resumes to four and checks that the
//! result matches an uninterrupted four-epoch run bit for bit.

use std::fs;
use std::path::Path;

use gsn_seq::harness::{preset, resume, train, LATEST_CHECKPOINT, METRICS_FILE};
use gsn_seq::Result;

pub fn run_example(out_dir: &Path) -> Result<bool> {
    let mut cfg = preset("balls/tgsn").expect("preset");
    cfg.layers = vec![20, 20];
    cfg.dataset.balls.resolution = 6;
    cfg.dataset.balls.frames = 20;
    cfg.dataset.videos_per_epoch = 4;
    cfg.dataset.test_videos = 2;
    cfg.subsequence_length = 10;
    cfg.subsequence_stride = 10;
    cfg.epochs = 4;
    let (full, part) = (out_dir.join("full"), out_dir.join("part"));
    train(&cfg, Some(&full))?;
    train(&{ let mut c = cfg.clone(); c.epochs = 2; c }, Some(&part))?;
    resume(&part.join(LATEST_CHECKPOINT), Some(4), Some(&part))?;
    let same = |f: &str| -> Result<bool> { Ok(fs::read(full.join(f))? == fs::read(part.join(f))?) };
    let identical = same(LATEST_CHECKPOINT)? && same(METRICS_FILE)?;
    println!("resumed run identical to uninterrupted run: {identical}");
    Ok(identical)
}

#[allow(dead_code)]
fn main() {
    run_example(&std::env::temp_dir().join("gsn-seq-examples").join("resume")).expect("checkpoint example");
}
