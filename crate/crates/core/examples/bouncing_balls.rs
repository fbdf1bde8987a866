//! Simulates three elastic balls, checks that kinetic energy is conserved and
//! renders a video strip as a PGM grid.

use std::path::PathBuf;

use gsn_seq::data::{generate_bouncing_balls, BallSystem, BouncingBallsConfig};
use gsn_seq::harness::emit_image_grid;
use gsn_seq::tensor::RandomSource;
use gsn_seq::Result;

pub fn run_example(out_dir: &std::path::Path) -> Result<(f64, PathBuf)> {
    let cfg = BouncingBallsConfig {
        seed: 4,
        ..Default::default()
    };
    let mut sys = BallSystem::random(&cfg, &mut RandomSource::new(cfg.seed))?;
    let e0 = sys.kinetic_energy();
    let mut drift: f64 = 0.0;
    for _ in 0..2000 {
        sys.advance_frame();
        drift = drift.max((sys.kinetic_energy() - e0).abs());
    }
    println!("kinetic energy {e0:.6}, largest drift over 2000 frames {drift:.2e}");

    let video = generate_bouncing_balls(&BouncingBallsConfig { frames: 20, ..cfg }, 1)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("balls.pgm");
    emit_image_grid(&video.sequences[0], 10, video.frame_shape, &path)?;
    println!("wrote {}", path.display());
    Ok((drift, path))
}

#[allow(dead_code)]
fn main() {
    run_example(&std::env::temp_dir().join("gsn-seq-examples")).expect("bouncing balls example");
}
