use serde::{Deserialize, Serialize};

use super::{SequenceDataset, ValueRange};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RandomSource};

const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BouncingBallsConfig {
    pub n_balls: usize,
    pub resolution: usize,
    pub frames: usize,
    pub box_size: f64,
    pub radius: f64,
    /// Mean speed in box units per frame.
    pub speed_scale: f64,
    pub seed: u64,
}

impl Default for BouncingBallsConfig {
    fn default() -> Self {
        BouncingBallsConfig {
            n_balls: 3,
            resolution: 15,
            frames: 128,
            box_size: 10.0,
            radius: 1.2,
            speed_scale: 0.5,
            seed: 0,
        }
    }
}

impl BouncingBallsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.resolution < 4 {
            return bad(format!("resolution {} below 4", self.resolution));
        }
        if self.n_balls == 0 || self.frames == 0 {
            return bad("need at least one ball and one frame".into());
        }
        if !(self.radius > 0.0 && self.radius < self.box_size / 2.0) {
            return bad(format!("radius {} must lie in (0, box/2)", self.radius));
        }
        if !(self.speed_scale >= 0.0 && self.speed_scale.is_finite()) {
            return bad(format!("speed scale {} must be finite and non-negative", self.speed_scale));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

/// Equal-mass hard discs in a square box with elastic walls and collisions.
#[derive(Clone, Debug, PartialEq)]
pub struct BallSystem {
    pub balls: Vec<Ball>,
    pub box_size: f64,
    pub radius: f64,
}

impl BallSystem {
    pub fn new(balls: Vec<Ball>, box_size: f64, radius: f64) -> Result<Self> {
        let lo = radius;
        let hi = box_size - radius;
        if !(radius > 0.0 && lo < hi) {
            return Err(Error::InvalidArgument(format!("radius {radius} does not fit box {box_size}")));
        }
        if let Some(b) = balls.iter().find(|b| b.pos.iter().any(|&p| p < lo || p > hi)) {
            return Err(Error::InvalidArgument(format!("ball at {:?} outside the box", b.pos)));
        }
        Ok(BallSystem {
            balls,
            box_size,
            radius,
        })
    }

    /// Rejection-sampled non-overlapping positions; speeds uniform in
    /// `[0.5, 1.5] * speed_scale` with uniform directions.
    pub fn random(cfg: &BouncingBallsConfig, rng: &mut RandomSource) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = (cfg.radius, cfg.box_size - cfg.radius);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let pos: Vec<[f64; 2]> = (0..cfg.n_balls)
                .map(|_| [rng.uniform_range(lo, hi), rng.uniform_range(lo, hi)])
                .collect();
            let clear = (0..pos.len()).all(|i| (i + 1..pos.len()).all(|j| dist_sq(pos[i], pos[j]) >= 4.0 * cfg.radius * cfg.radius));
            if !clear {
                continue;
            }
            let balls = pos
                .into_iter()
                .map(|pos| {
                    let speed = rng.uniform_range(0.5, 1.5) * cfg.speed_scale;
                    let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
                    Ball {
                        pos,
                        vel: [speed * angle.cos(), speed * angle.sin()],
                    }
                })
                .collect();
            return BallSystem::new(balls, cfg.box_size, cfg.radius);
        }
        Err(Error::Placement {
            balls: cfg.n_balls,
            attempts: PLACEMENT_ATTEMPTS,
        })
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.balls.iter().map(|b| b.vel[0] * b.vel[0] + b.vel[1] * b.vel[1]).sum::<f64>()
    }

    pub fn momentum(&self) -> [f64; 2] {
        self.balls.iter().fold([0.0, 0.0], |m, b| [m[0] + b.vel[0], m[1] + b.vel[1]])
    }

    /// Moves every ball by `dt`, reflects off the walls, then resolves
    /// pairwise collisions in index order.
    pub fn step(&mut self, dt: f64) {
        let (lo, hi) = (self.radius, self.box_size - self.radius);
        for b in &mut self.balls {
            for a in 0..2 {
                b.pos[a] += b.vel[a] * dt;
                if b.pos[a] < lo {
                    b.pos[a] = 2.0 * lo - b.pos[a];
                    b.vel[a] = -b.vel[a];
                } else if b.pos[a] > hi {
                    b.pos[a] = 2.0 * hi - b.pos[a];
                    b.vel[a] = -b.vel[a];
                }
            }
        }
        let contact = 4.0 * self.radius * self.radius;
        for i in 0..self.balls.len() {
            for j in i + 1..self.balls.len() {
                let (a, b) = (self.balls[i], self.balls[j]);
                let d = [b.pos[0] - a.pos[0], b.pos[1] - a.pos[1]];
                let d2 = d[0] * d[0] + d[1] * d[1];
                if d2 >= contact || d2 == 0.0 {
                    continue;
                }
                let len = d2.sqrt();
                let n = [d[0] / len, d[1] / len];
                let closing = (a.vel[0] - b.vel[0]) * n[0] + (a.vel[1] - b.vel[1]) * n[1];
                if closing <= 0.0 {
                    continue;
                }
                for k in 0..2 {
                    self.balls[i].vel[k] -= closing * n[k];
                    self.balls[j].vel[k] += closing * n[k];
                }
            }
        }
    }

    /// Advances one frame (unit time) in substeps short enough that no ball
    /// moves more than a quarter radius per substep.
    pub fn advance_frame(&mut self) {
        // No single ball can be faster than the root of the summed squares.
        let bound = self.balls.iter().map(|b| b.vel[0] * b.vel[0] + b.vel[1] * b.vel[1]).sum::<f64>().sqrt();
        let n = (bound / (self.radius / 4.0)).floor() as usize + 1;
        let dt = 1.0 / n as f64;
        for _ in 0..n {
            self.step(dt);
        }
    }

    pub fn render(&self, resolution: usize) -> Vec<f64> {
        render_balls(&self.balls, self.box_size, self.radius, resolution)
    }
}

fn dist_sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Row-major `resolution²` image: sum of Gaussian blobs with sigma
/// `radius / 2` at each pixel centre, clamped to 1.
pub fn render_balls(balls: &[Ball], box_size: f64, radius: f64, resolution: usize) -> Vec<f64> {
    let cell = box_size / resolution as f64;
    let inv = 1.0 / (2.0 * (radius / 2.0).powi(2));
    let mut out = vec![0.0; resolution * resolution];
    for (i, px) in out.iter_mut().enumerate() {
        let c = [(i % resolution) as f64 * cell + cell / 2.0, (i / resolution) as f64 * cell + cell / 2.0];
        let v: f64 = balls.iter().map(|b| (-dist_sq(c, b.pos) * inv).exp()).sum();
        *px = v.min(1.0);
    }
    out
}

/// One video of `cfg.frames` frames.
pub fn simulate_bouncing_balls(cfg: &BouncingBallsConfig) -> Result<SequenceDataset> {
    let mut rng = RandomSource::new(cfg.seed);
    let video = simulate(cfg, &mut rng)?;
    SequenceDataset::new(vec![video], ValueRange::UnitInterval)?.with_frame_shape(cfg.resolution, cfg.resolution)
}

/// `count` videos; video `i` uses child stream `i` of `cfg.seed`.
pub fn generate_bouncing_balls(cfg: &BouncingBallsConfig, count: usize) -> Result<SequenceDataset> {
    let root = RandomSource::new(cfg.seed);
    let videos = (0..count)
        .map(|i| simulate(cfg, &mut root.fork(i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    SequenceDataset::new(videos, ValueRange::UnitInterval)?.with_frame_shape(cfg.resolution, cfg.resolution)
}

fn simulate(cfg: &BouncingBallsConfig, rng: &mut RandomSource) -> Result<Matrix> {
    let mut sys = BallSystem::random(cfg, rng)?;
    let mut data = Vec::with_capacity(cfg.frames * cfg.resolution * cfg.resolution);
    for _ in 0..cfg.frames {
        data.extend(sys.render(cfg.resolution));
        sys.advance_frame();
    }
    Matrix::from_vec(cfg.frames, cfg.resolution * cfg.resolution, data)
}
