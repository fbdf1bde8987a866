//! Trains a two-layer GSN with walkback, then runs its Markov chain from a
//! test image and writes the samples as a PGM grid.

use std::path::PathBuf;

use gsn_seq::gsn::{gsn_sample_chain, gsn_train_step, GsnParams, WalkbackConfig};
use gsn_seq::harness::{emit_image_grid, gaussian_blobs};
use gsn_seq::nn::{OptimizerConfig, OptimizerState};
use gsn_seq::tensor::{Activation, Matrix, NoiseConfig, RandomSource};
use gsn_seq::Result;

pub fn run_example(out_dir: &std::path::Path) -> Result<PathBuf> {
    let train = gaussian_blobs(200, 8, 1)?;
    let mut rng = RandomSource::new(3);
    let noise = NoiseConfig::input_only(0.3).with_hidden_gaussian(0.0, 0.5);
    let mut gsn = GsnParams::new(&[64, 48, 32], true, noise, Activation::Tanh, Activation::Sigmoid, &mut rng)?;
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.25, 0.5, 0.995))?;
    let wb = WalkbackConfig::fixed(4);
    for _ in 0..60 {
        for start in (0..train.rows()).step_by(20) {
            gsn_train_step(&mut gsn, &train.row_range(start, 20)?, &wb, &mut opt, &mut rng)?;
        }
        opt.end_epoch();
    }
    let seed = Matrix::row_vector(gaussian_blobs(1, 8, 9)?.row(0).to_vec());
    let frames = gsn_sample_chain(&gsn, &seed, 20, &mut rng)?;
    let refs: Vec<&Matrix> = frames.iter().collect();
    let grid = Matrix::vstack(&refs)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("gsn_samples.pgm");
    emit_image_grid(&grid, 10, Some((8, 8)), &path)?;
    println!("wrote {} ({} samples)", path.display(), frames.len());
    Ok(path)
}

#[allow(dead_code)]
fn main() {
    run_example(&std::env::temp_dir().join("gsn-seq-examples")).expect("gsn sampling example");
}
