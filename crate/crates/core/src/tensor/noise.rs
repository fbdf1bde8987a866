use serde::{Deserialize, Serialize};

use super::{Matrix, RandomSource};
use crate::error::{Error, Result};

/// Corruption settings shared by every GSN.
///
/// Salt-and-pepper applies to visible units only; the Gaussian terms apply to
/// hidden units before and/or after the activation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub salt_pepper_p: f64,
    pub gauss_mean: f64,
    pub gauss_sigma: f64,
    pub apply_pre_activation: bool,
    pub apply_post_activation: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::off()
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        NoiseConfig {
            salt_pepper_p: 0.0,
            gauss_mean: 0.0,
            gauss_sigma: 0.0,
            apply_pre_activation: false,
            apply_post_activation: false,
        }
    }

    /// Salt-and-pepper on the input only.
    pub fn input_only(p: f64) -> Self {
        NoiseConfig {
            salt_pepper_p: p,
            ..NoiseConfig::off()
        }
    }

    pub fn with_hidden_gaussian(mut self, mean: f64, sigma: f64) -> Self {
        self.gauss_mean = mean;
        self.gauss_sigma = sigma;
        self.apply_pre_activation = true;
        self.apply_post_activation = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.salt_pepper_p) {
            return Err(Error::InvalidProbability(self.salt_pepper_p));
        }
        if self.gauss_sigma < 0.0 || self.gauss_sigma.is_nan() {
            return Err(Error::NegativeSigma(self.gauss_sigma));
        }
        Ok(())
    }

    pub fn hidden_noise_active(&self) -> bool {
        self.apply_pre_activation || self.apply_post_activation
    }
}

/// Realised salt-and-pepper corruption: where `keep` is false the element is
/// overwritten by the matching `fill` value (0 or 1).
#[derive(Clone, Debug, PartialEq)]
pub struct SaltPepperMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    fill: Vec<f64>,
}

impl SaltPepperMask {
    /// Draws exactly two uniforms per element regardless of `p`.
    pub fn sample(rows: usize, cols: usize, p: f64, rng: &mut RandomSource) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        let n = rows * cols;
        let mut keep = Vec::with_capacity(n);
        let mut fill = Vec::with_capacity(n);
        for _ in 0..n {
            let replace = rng.uniform() < p;
            let coin = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
            keep.push(!replace);
            fill.push(coin);
        }
        Ok(SaltPepperMask {
            rows,
            cols,
            keep,
            fill,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn replaced_count(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.shape() != self.shape() {
            return Err(Error::shape("salt_pepper", m.shape(), self.shape()));
        }
        let data = m
            .data()
            .iter()
            .zip(self.keep.iter().zip(&self.fill))
            .map(|(&v, (&k, &f))| if k { v } else { f })
            .collect();
        Matrix::from_vec(m.rows(), m.cols(), data)
    }

    /// Zeroes gradient entries at replaced positions.
    pub fn mask_gradient(&self, grad: &Matrix) -> Matrix {
        let data = grad
            .data()
            .iter()
            .zip(&self.keep)
            .map(|(&g, &k)| if k { g } else { 0.0 })
            .collect();
        Matrix::from_vec(grad.rows(), grad.cols(), data).expect("mask shape")
    }
}

/// Replaces each element with probability `p` by a fair coin flip in {0, 1}.
pub fn salt_pepper(m: &Matrix, p: f64, rng: &mut RandomSource) -> Result<Matrix> {
    SaltPepperMask::sample(m.rows(), m.cols(), p, rng)?.apply(m)
}

/// Matrix of independent `N(mean, sigma²)` draws.
pub fn gaussian(
    rows: usize,
    cols: usize,
    mean: f64,
    sigma: f64,
    rng: &mut RandomSource,
) -> Result<Matrix> {
    if sigma < 0.0 || sigma.is_nan() {
        return Err(Error::NegativeSigma(sigma));
    }
    let data = (0..rows * cols).map(|_| rng.normal(mean, sigma)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Element-wise `m + N(mean, sigma²)`.
pub fn add_gaussian(m: &Matrix, mean: f64, sigma: f64, rng: &mut RandomSource) -> Result<Matrix> {
    let noise = gaussian(m.rows(), m.cols(), mean, sigma, rng)?;
    m.add(&noise)
}
