use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

fn default_anneal() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    /// Per-epoch multiplicative decay of the SGD learning rate.
    #[serde(default = "default_anneal")]
    pub anneal_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64, anneal_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            anneal_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            anneal_rate: 1.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.anneal_rate > 0.0 && self.anneal_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "anneal rate {} outside (0, 1]",
                self.anneal_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} {b} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Optimizer hyper-parameters plus per-parameter accumulators.
///
/// For SGD the first accumulator holds the velocity; Adam uses both for the
/// first and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    epochs: u32,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            epochs: 0,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// Current learning rate: `lr0 · anneal^epochs` for SGD, `lr0` for Adam.
    pub fn learning_rate(&self) -> f64 {
        match self.config.kind {
            OptimizerKind::SgdMomentum => {
                self.config.learning_rate * self.config.anneal_rate.powi(self.epochs as i32)
            }
            OptimizerKind::Adam => self.config.learning_rate,
        }
    }

    /// Signals an epoch boundary.
    pub fn end_epoch(&mut self) {
        self.epochs += 1;
    }

    pub fn epochs(&self) -> u32 {
        self.epochs
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn accumulators(&self) -> (&[Matrix], &[Matrix]) {
        (&self.first, &self.second)
    }

    /// Rebuilds state saved with [`OptimizerState::accumulators`].
    pub fn restore(
        config: OptimizerConfig,
        epochs: u32,
        step: u64,
        first: Vec<Matrix>,
        second: Vec<Matrix>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            epochs,
            step,
            first,
            second,
        })
    }

    fn ensure_accumulators(&mut self, params: &[&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer", p.shape(), g.shape()));
            }
        }
        if self.first.is_empty() {
            self.first = params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect();
            self.second = params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect();
        }
        if self.first.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (acc, p) in self.first.iter().zip(params) {
            if acc.shape() != p.shape() {
                return Err(Error::shape(
                    "optimizer accumulator",
                    acc.shape(),
                    p.shape(),
                ));
            }
        }
        Ok(())
    }

    /// One update with whichever rule the config selects.
    pub fn apply(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        match self.config.kind {
            OptimizerKind::SgdMomentum => sgd_momentum_update(params, grads, self),
            OptimizerKind::Adam => {
                let step = self.step + 1;
                adam_update(params, grads, self, step)
            }
        }
    }
}

/// `velocity ← momentum·velocity − lr·grad; param ← param + velocity`.
pub fn sgd_momentum_update(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    opt: &mut OptimizerState,
) -> Result<()> {
    opt.ensure_accumulators(params, grads)?;
    let lr = opt.learning_rate();
    let mu = opt.config.momentum;
    for ((p, g), vel) in params.iter_mut().zip(grads).zip(opt.first.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    opt.step += 1;
    Ok(())
}

/// Bias-corrected Adam at step `step` (1-based).
pub fn adam_update(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    opt: &mut OptimizerState,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidArgument(
            "adam step must be at least 1".into(),
        ));
    }
    opt.ensure_accumulators(params, grads)?;
    let OptimizerConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
        ..
    } = opt.config;
    let c1 = 1.0 - beta1.powi(step as i32);
    let c2 = 1.0 - beta2.powi(step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(opt.first.iter_mut())
        .zip(opt.second.iter_mut())
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((pv, &gv), (mv, vv)) in it {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    opt.step = step;
    Ok(())
}
