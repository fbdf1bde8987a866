//! Differentiable building blocks shared by every model: dense and LSTM
//! layers with hand-written backward passes, losses, optimizers, global-norm
//! clipping and a finite-difference gradient checker.

mod dense;
mod loss;
mod lstm;
mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RandomSource};

pub use dense::{dense_backward, dense_forward, DenseCache, DenseGrads, DenseLayer};
pub use loss::{bce_loss, mse_loss, LossKind, BCE_EPS};
pub use lstm::{
    lstm_step, lstm_step_backward, LstmCache, LstmCell, LstmGrads, LstmState, FORGET_BIAS_INIT,
};
pub use optim::{adam_update, sgd_momentum_update, OptimizerConfig, OptimizerKind, OptimizerState};

pub(crate) use loss::clamp_prob;

/// Uniform in `±sqrt(6 / (rows + cols))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut RandomSource) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("init shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradClipConfig {
    pub max_l2_norm: f64,
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::norm_sq).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max / norm` when their joint L2 norm exceeds
/// `max`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], cfg: GradClipConfig) -> f64 {
    let norm = global_norm(grads);
    if norm > cfg.max_l2_norm && norm.is_finite() {
        let scale = cfg.max_l2_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(scale);
        }
    }
    norm
}

/// Relative error floor; differences on gradients smaller than this are
/// measured against it instead of their own magnitude.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: usize,
    pub element: usize,
    pub checked: usize,
}

/// Central finite differences against the analytic gradients returned by
/// `loss`. The closure must be deterministic (noise drawn from a fixed seed).
/// Returns the maximum relative error over every parameter element.
pub fn gradcheck<F>(loss: F, params: &[Matrix], h: f64) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    Ok(gradcheck_report(loss, params, h, usize::MAX)?.max_rel_error)
}

/// As [`gradcheck`], checking at most `max_per_param` evenly strided elements
/// of each parameter.
pub fn gradcheck_report<F>(
    mut loss: F,
    params: &[Matrix],
    h: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    let (_, analytic) = loss(params)?;
    if analytic.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "loss returned {} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut report = GradCheckReport::default();
    let mut work = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[pi].shape() {
            return Err(Error::shape("gradcheck", grad.shape(), params[pi].shape()));
        }
        let n = params[pi].len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for e in (0..n).step_by(stride) {
            let original = work[pi].data()[e];
            work[pi].data_mut()[e] = original + h;
            let (plus, _) = loss(&work)?;
            work[pi].data_mut()[e] = original - h;
            let (minus, _) = loss(&work)?;
            work[pi].data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[e];
            let denom = a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.param = pi;
                report.element = e;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{activate, gaussian, Activation};

    #[test]
    fn clip_leaves_small_norm() {
        let mut g = vec![Matrix::row_vector(vec![0.06, 0.08])];
        let before = g.clone();
        let n = clip_global_norm(&mut g, GradClipConfig { max_l2_norm: 0.25 });
        assert!((n - 0.1).abs() < 1e-15);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_scales_to_max_and_keeps_direction() {
        let mut g = vec![
            Matrix::row_vector(vec![0.6]),
            Matrix::row_vector(vec![0.8, 0.0]),
        ];
        let before = g.clone();
        clip_global_norm(&mut g, GradClipConfig { max_l2_norm: 0.25 });
        let after = global_norm(&g);
        assert!((after - 0.25).abs() < 1e-12);
        assert!(after <= 0.25 + 1e-12);
        let dot: f64 = g
            .iter()
            .zip(&before)
            .map(|(a, b)| a.hadamard(b).unwrap().sum())
            .sum();
        let cos = dot / (after * global_norm(&before));
        assert!((cos - 1.0).abs() < 1e-12);
        assert_eq!(g[0].get(0, 0), 0.6 * 0.25);
    }

    #[test]
    fn linear_mse_gradcheck_is_exact() {
        let mut rng = RandomSource::new(1);
        let x = gaussian(6, 3, 0.0, 1.0, &mut rng).unwrap();
        let y = gaussian(6, 2, 0.0, 1.0, &mut rng).unwrap();
        let w = gaussian(3, 2, 0.0, 1.0, &mut rng).unwrap();
        let err = gradcheck(
            |ps| {
                let pred = x.matmul(&ps[0])?;
                let (l, g) = mse_loss(&pred, &y)?;
                Ok((l, vec![x.matmul_tn(&g)?]))
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    fn two_layer(ps: &[Matrix], x: &Matrix, y: &Matrix) -> Result<(f64, Vec<Matrix>)> {
        let l1 = DenseLayer {
            weights: ps[0].clone(),
            bias: ps[1].clone(),
            activation: Activation::Tanh,
        };
        let l2 = DenseLayer {
            weights: ps[2].clone(),
            bias: ps[3].clone(),
            activation: Activation::Sigmoid,
        };
        let (h, c1) = dense_forward(&l1, x)?;
        let (p, c2) = dense_forward(&l2, &h)?;
        let (l, g) = bce_loss(&p, y)?;
        let (gh, g2) = dense_backward(&l2, &c2, &g)?;
        let (_, g1) = dense_backward(&l1, &c1, &gh)?;
        Ok((l, vec![g1.weights, g1.bias, g2.weights, g2.bias]))
    }

    fn two_layer_setup(seed: u64) -> (Vec<Matrix>, Matrix, Matrix) {
        let mut rng = RandomSource::new(seed);
        let x = gaussian(5, 4, 0.0, 1.0, &mut rng).unwrap();
        let y = activate(
            &gaussian(5, 3, 0.0, 2.0, &mut rng).unwrap(),
            Activation::Sigmoid,
        );
        let ps = vec![
            glorot_uniform(4, 6, &mut rng),
            gaussian(1, 6, 0.0, 0.1, &mut rng).unwrap(),
            glorot_uniform(6, 3, &mut rng),
            gaussian(1, 3, 0.0, 0.1, &mut rng).unwrap(),
        ];
        (ps, x, y)
    }

    #[test]
    fn two_layer_net_gradcheck() {
        for seed in 0..5 {
            let (ps, x, y) = two_layer_setup(seed);
            let err = gradcheck(|p| two_layer(p, &x, &y), &ps, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (ps, x, y) = two_layer_setup(9);
        let err = gradcheck(
            |p| {
                let (l, mut g) = two_layer(p, &x, &y)?;
                let v = g[0].get(1, 2);
                g[0].set(1, 2, v * 1.5 + 0.01);
                Ok((l, g))
            },
            &ps,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }
}
