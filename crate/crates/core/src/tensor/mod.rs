//! Dense linear algebra, activations, seeded randomness and the two
//! corruption processes (salt-and-pepper and additive Gaussian).

mod matrix;
mod noise;
mod random;

use serde::{Deserialize, Serialize};

pub use matrix::Matrix;
pub use noise::{add_gaussian, gaussian, salt_pepper, NoiseConfig, SaltPepperMask};
pub use random::{RandomSource, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's own output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Element-wise activation.
pub fn activate(m: &Matrix, kind: Activation) -> Matrix {
    m.map(|v| kind.apply(v))
}
