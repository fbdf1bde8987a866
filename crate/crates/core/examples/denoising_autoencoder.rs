//! Trains a one-layer denoising autoencoder on soft blob images and reports
//! clean reconstruction cross-entropy before and after.

use gsn_seq::gsn::{dae_train_step, gsn_reconstruct_clean, GsnParams};
use gsn_seq::harness::gaussian_blobs;
use gsn_seq::nn::{LossKind, OptimizerConfig, OptimizerState};
use gsn_seq::tensor::{Activation, NoiseConfig, RandomSource};
use gsn_seq::Result;

pub fn run_example() -> Result<(f64, f64)> {
    let train = gaussian_blobs(200, 8, 1)?;
    let test = gaussian_blobs(50, 8, 2)?;
    let mut rng = RandomSource::new(7);
    let mut dae = GsnParams::new(
        &[64, 32],
        true,
        NoiseConfig::input_only(0.3),
        Activation::Tanh,
        Activation::Sigmoid,
        &mut rng,
    )?;
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.25, 0.5, 1.0))?;
    let score = |p: &GsnParams| -> Result<f64> {
        let (r, _) = gsn_reconstruct_clean(p, &test, 1)?;
        Ok(LossKind::Bce.eval(&r, &test)?.0)
    };
    let before = score(&dae)?;
    for epoch in 0..150 {
        for start in (0..train.rows()).step_by(20) {
            dae_train_step(&mut dae, &train.row_range(start, 20)?, &mut opt, &mut rng)?;
        }
        opt.end_epoch();
        if epoch % 50 == 49 {
            println!("epoch {:3}  test reconstruction BCE {:.4}", epoch + 1, score(&dae)?);
        }
    }
    let after = score(&dae)?;
    println!("before {before:.4}  after {after:.4}");
    Ok((before, after))
}

#[allow(dead_code)]
fn main() {
    run_example().expect("denoising autoencoder example");
}
