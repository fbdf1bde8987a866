use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Mse,
}

impl LossKind {
    pub fn eval(self, pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            LossKind::Bce => bce_loss(pred, target),
            LossKind::Mse => mse_loss(pred, target),
        }
    }
}

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Mean binary cross-entropy and its gradient with respect to `pred`.
pub fn bce_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("bce_loss", pred.shape(), target.shape()));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let p = clamp_prob(p);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let grad = pred.zip_map(target, |p, t| {
        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
            0.0
        } else {
            (p - t) / (p * (1.0 - p)) / n
        }
    })?;
    Ok((total / n, grad))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mse_loss", pred.shape(), target.shape()));
    }
    let n = pred.len() as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t) / n)?;
    Ok((total / n, grad))
}
