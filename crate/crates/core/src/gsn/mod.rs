//! Generative stochastic networks: layered parameters, the alternating-layer
//! Markov chain, walkback training and the denoising auto-encoder special case.

mod chain;
mod dae;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{glorot_uniform, LossKind};
use crate::tensor::{Activation, Matrix, NoiseConfig, RandomSource};

pub(crate) use chain::{decode, run_chain, zero_hiddens};
pub use chain::{
    gsn_loss_and_grads, gsn_reconstruct, gsn_reconstruct_clean, gsn_sample_chain, gsn_train_step,
    gsn_update_step, walkback_pairs, GsnSweep,
};
pub use dae::{dae_loss_and_grads, dae_train_step};

/// Layered GSN weights.
///
/// `up[i]` maps layer `i` to layer `i + 1`. With tied weights the downward
/// map is `up[i]ᵀ` and no separate storage exists, so the transpose relation
/// cannot drift. Untied networks keep `down[i]` of shape
/// `layer_sizes[i + 1] × layer_sizes[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GsnParams {
    pub layer_sizes: Vec<usize>,
    pub up: Vec<Matrix>,
    pub down: Option<Vec<Matrix>>,
    pub biases: Vec<Matrix>,
    pub noise: NoiseConfig,
    pub hidden_activation: Activation,
    pub visible_activation: Activation,
}

/// Graph handles for one binding of a [`GsnParams`].
#[derive(Clone, Debug)]
pub(crate) struct GsnVars {
    pub up: Vec<Var>,
    pub down: Option<Vec<Var>>,
    pub biases: Vec<Var>,
}

impl GsnParams {
    /// Glorot-initialised weights, zero biases. Untied down weights start as
    /// the transpose of the up weights.
    pub fn new(
        layer_sizes: &[usize],
        tied: bool,
        noise: NoiseConfig,
        hidden_activation: Activation,
        visible_activation: Activation,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "a GSN needs a visible and at least one hidden layer of nonzero width, got {layer_sizes:?}"
            )));
        }
        noise.validate()?;
        let up: Vec<Matrix> = layer_sizes
            .windows(2)
            .map(|w| glorot_uniform(w[0], w[1], rng))
            .collect();
        let down = (!tied).then(|| up.iter().map(Matrix::transpose).collect());
        let biases = layer_sizes.iter().map(|&n| Matrix::zeros(1, n)).collect();
        Ok(GsnParams {
            layer_sizes: layer_sizes.to_vec(),
            up,
            down,
            biases,
            noise,
            hidden_activation,
            visible_activation,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(
        layer_sizes: &[usize],
        tied: bool,
        noise: NoiseConfig,
        hidden_activation: Activation,
        visible_activation: Activation,
    ) -> Result<Self> {
        let mut p = GsnParams::new(
            layer_sizes,
            tied,
            noise,
            hidden_activation,
            visible_activation,
            &mut RandomSource::new(0),
        )?;
        for m in p.params_mut() {
            m.scale_in_place(0.0);
        }
        Ok(p)
    }

    pub fn tied(&self) -> bool {
        self.down.is_none()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn visible_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.layer_sizes[1..]
    }

    pub fn hidden_total(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    /// Materialised downward weight from layer `i + 1` to layer `i`.
    pub fn down_weight(&self, i: usize) -> Matrix {
        match &self.down {
            Some(d) => d[i].clone(),
            None => self.up[i].transpose(),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.visible_activation {
            Activation::Sigmoid => LossKind::Bce,
            _ => LossKind::Mse,
        }
    }

    pub fn num_params(&self) -> usize {
        self.up.len() + self.down.as_ref().map_or(0, Vec::len) + self.biases.len()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.up.len()).map(|i| format!("up.{i}")).collect();
        if let Some(d) = &self.down {
            names.extend((0..d.len()).map(|i| format!("down.{i}")));
        }
        names.extend((0..self.biases.len()).map(|i| format!("bias.{i}")));
        names
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.up.iter().collect();
        if let Some(d) = &self.down {
            out.extend(d.iter());
        }
        out.extend(self.biases.iter());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.up.iter_mut().collect();
        if let Some(d) = &mut self.down {
            out.extend(d.iter_mut());
        }
        out.extend(self.biases.iter_mut());
        out
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|m| m.shape()).collect()
    }

    /// Replaces every parameter with the matching entry of `values`.
    pub fn set_params(&mut self, values: &[Matrix]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} GSN parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        for (p, v) in self.params_mut().into_iter().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::shape("set_params", p.shape(), v.shape()));
            }
            *p = v.clone();
        }
        Ok(())
    }

    /// Binds the parameters into `g`. With `first_id` they become trainable
    /// leaves numbered from `first_id` in [`GsnParams::params`] order;
    /// otherwise they are constants.
    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>, first_id: Option<usize>) -> GsnVars {
        let mut id = first_id;
        let mut leaf = |g: &mut Graph<'a>, m: &'a Matrix| match &mut id {
            Some(i) => {
                let v = g.param(*i, m);
                *i += 1;
                v
            }
            None => g.constant_ref(m),
        };
        let up = self.up.iter().map(|m| leaf(g, m)).collect();
        let down = self
            .down
            .as_ref()
            .map(|d| d.iter().map(|m| leaf(g, m)).collect());
        let biases = self.biases.iter().map(|m| leaf(g, m)).collect();
        GsnVars { up, down, biases }
    }

    /// As [`GsnParams::bind`] but copies the values so the graph owns them.
    pub(crate) fn bind_owned(&self, g: &mut Graph<'static>, first_id: Option<usize>) -> GsnVars {
        let mut id = first_id;
        let mut leaf = |g: &mut Graph<'static>, m: &Matrix| match &mut id {
            Some(i) => {
                let v = g.param_owned(*i, m.clone());
                *i += 1;
                v
            }
            None => g.constant(m.clone()),
        };
        let up = self.up.iter().map(|m| leaf(g, m)).collect();
        let down = self
            .down
            .as_ref()
            .map(|d| d.iter().map(|m| leaf(g, m)).collect());
        let biases = self.biases.iter().map(|m| leaf(g, m)).collect();
        GsnVars { up, down, biases }
    }
}

/// Per-layer activations, visible first.
#[derive(Clone, Debug, PartialEq)]
pub struct GsnState {
    pub layers: Vec<Matrix>,
}

impl GsnState {
    /// Visible set to `x`, hiddens zero.
    pub fn start(params: &GsnParams, x: &Matrix) -> Result<Self> {
        if x.cols() != params.visible_width() {
            return Err(Error::shape(
                "GsnState::start",
                x.shape(),
                (x.rows(), params.visible_width()),
            ));
        }
        let mut layers = vec![x.clone()];
        layers.extend(
            params
                .hidden_widths()
                .iter()
                .map(|&n| Matrix::zeros(x.rows(), n)),
        );
        Ok(GsnState { layers })
    }

    pub fn visible(&self) -> &Matrix {
        &self.layers[0]
    }

    pub fn hiddens(&self) -> &[Matrix] {
        &self.layers[1..]
    }

    fn check(&self, params: &GsnParams) -> Result<()> {
        if self.layers.len() != params.layer_sizes.len() {
            return Err(Error::InvalidArgument(format!(
                "state has {} layers, network has {}",
                self.layers.len(),
                params.layer_sizes.len()
            )));
        }
        let batch = self.layers[0].rows();
        for (m, &n) in self.layers.iter().zip(&params.layer_sizes) {
            if m.shape() != (batch, n) {
                return Err(Error::shape("GsnState", m.shape(), (batch, n)));
            }
        }
        Ok(())
    }
}

/// Number of chain steps per training example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkbackConfig {
    pub k: usize,
    #[serde(default)]
    pub continue_p: f64,
    #[serde(default)]
    pub use_geometric: bool,
}

impl WalkbackConfig {
    pub fn fixed(k: usize) -> Self {
        WalkbackConfig {
            k,
            continue_p: 0.0,
            use_geometric: false,
        }
    }

    pub fn geometric(continue_p: f64) -> Self {
        WalkbackConfig {
            k: 1,
            continue_p,
            use_geometric: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument(
                "walkback k must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.continue_p) {
            return Err(Error::InvalidArgument(format!(
                "walkback continue_p {} outside [0, 1)",
                self.continue_p
            )));
        }
        Ok(())
    }

    /// Chain length for one example: `k` in fixed mode; in geometric mode one
    /// step plus one more for every uniform draw below `continue_p`.
    pub fn draw_steps(&self, rng: &mut RandomSource) -> usize {
        if !self.use_geometric {
            return self.k;
        }
        let mut steps = 1;
        while rng.uniform() < self.continue_p {
            steps += 1;
        }
        steps
    }
}
