//! One GSN + LSTM level, shared by the RNN-GSN and every SEN level.

use super::recurrent::{bind_dense, bind_lstm, dense, lstm, DenseVars, LstmVars};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::gsn::{decode, run_chain, zero_hiddens, GsnParams, GsnVars, WalkbackConfig};
use crate::nn::{DenseLayer, LstmState};
use crate::tensor::{Matrix, RandomSource};

/// Hidden layers feeding the LSTM: layers 1 and 3 when there are at least
/// three, otherwise every odd layer.
pub fn default_taps(hidden_layers: usize) -> Vec<usize> {
    if hidden_layers >= 3 {
        vec![1, 3]
    } else {
        (1..=hidden_layers).step_by(2).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LevelRef<'a> {
    pub gsn: &'a GsnParams,
    pub lstm: &'a crate::nn::LstmCell,
    pub taps: &'a [usize],
    pub projection: &'a DenseLayer,
}

impl LevelRef<'_> {
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut s = self.gsn.param_shapes();
        s.extend([
            self.lstm.input_weights.shape(),
            self.lstm.recurrent_weights.shape(),
            self.lstm.bias.shape(),
            self.projection.weights.shape(),
            self.projection.bias.shape(),
        ]);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.gsn.hidden_layers();
        if self.taps.is_empty() || self.taps.iter().any(|&t| t == 0 || t > l) {
            return Err(Error::InvalidArgument(format!(
                "taps {:?} must name hidden layers 1..={l}",
                self.taps
            )));
        }
        let tap_width: usize = self.taps.iter().map(|&t| self.gsn.layer_sizes[t]).sum();
        if self.lstm.inputs() != tap_width {
            return Err(Error::InvalidArgument(format!(
                "LSTM input width {} differs from tapped width {tap_width}",
                self.lstm.inputs()
            )));
        }
        if self.projection.inputs() != self.lstm.hidden()
            || self.projection.outputs() != self.gsn.hidden_total()
        {
            return Err(Error::InvalidArgument(format!(
                "projection is {}x{}, expected {}x{}",
                self.projection.inputs(),
                self.projection.outputs(),
                self.lstm.hidden(),
                self.gsn.hidden_total()
            )));
        }
        Ok(())
    }
}

pub(crate) struct LevelVars {
    gsn: GsnVars,
    frozen: GsnVars,
    lstm: LstmVars,
    proj: DenseVars,
}

/// Trainable leaves in order GSN, LSTM, projection; plus a constant copy of
/// the GSN for decoding predictions.
pub(crate) fn bind_level<'a>(
    g: &mut Graph<'a>,
    level: LevelRef<'a>,
    id: &mut Option<usize>,
) -> LevelVars {
    let gsn = level.gsn.bind(g, *id);
    if let Some(i) = id {
        *i += level.gsn.num_params();
    }
    let lstm = bind_lstm(g, level.lstm, id);
    let proj = bind_dense(g, level.projection, id);
    let frozen = level.gsn.bind(g, None);
    LevelVars {
        gsn,
        frozen,
        lstm,
        proj,
    }
}

pub(crate) struct LevelOut {
    pub recons: Vec<Var>,
    pub hiddens: Vec<Var>,
    pub h: Var,
    pub c: Var,
    pub predicted: Vec<Var>,
    pub prediction: Var,
}

/// Walkback chain on `visible`, LSTM on the detached tapped hiddens,
/// projection to a predicted hidden stack, decoded by the frozen GSN.
#[allow(clippy::too_many_arguments)]
pub(crate) fn level_forward(
    g: &mut Graph<'_>,
    level: LevelRef<'_>,
    vars: &LevelVars,
    visible: Var,
    state: &LstmState,
    steps: usize,
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<LevelOut> {
    let batch = g.value(visible).rows();
    if state.h.shape() != (batch, level.lstm.hidden()) {
        return Err(Error::shape(
            "level state",
            state.h.shape(),
            (batch, level.lstm.hidden()),
        ));
    }
    let h0 = zero_hiddens(g, level.gsn, batch);
    let chain = run_chain(
        g, level.gsn, &vars.gsn, visible, h0, steps, true, noisy, rng,
    )?;
    let tapped: Vec<Var> = level
        .taps
        .iter()
        .map(|&t| g.detach(chain.hiddens[t - 1]))
        .collect();
    let input = g.concat(&tapped)?;
    let hp = g.constant(state.h.clone());
    let cp = g.constant(state.c.clone());
    let (h, c) = lstm(g, &vars.lstm, input, hp, cp)?;
    let proj = dense(g, &vars.proj, h)?;
    let mut predicted = Vec::with_capacity(level.gsn.hidden_layers());
    let mut start = 0;
    for &n in level.gsn.hidden_widths() {
        predicted.push(g.columns(proj, start, n)?);
        start += n;
    }
    let prediction = decode(g, level.gsn, &vars.frozen, predicted[0])?;
    Ok(LevelOut {
        recons: chain.recons,
        hiddens: chain.hiddens,
        h,
        c,
        predicted,
        prediction,
    })
}

/// Values produced by [`stack_step`].
pub(crate) struct StackStep {
    pub reconstruction: Vec<f64>,
    pub prediction: Vec<f64>,
    pub states: Vec<LstmState>,
    pub hiddens: Vec<Vec<Matrix>>,
    pub reconstructions: Vec<Matrix>,
    pub predicted_hiddens: Vec<Vec<Matrix>>,
    pub predictions: Vec<Matrix>,
    /// Gradients of the summed reconstruction losses and of the summed
    /// prediction losses, each in stacked parameter order.
    pub grads: Option<(Vec<Matrix>, Vec<Matrix>)>,
}

/// Noise-free LSTM outputs of levels `0..n-1` for input `x`, starting from
/// `states`. These are the targets for the upper levels' predictions.
fn clean_targets(
    levels: &[LevelRef<'_>],
    walkback: &WalkbackConfig,
    x: &Matrix,
    states: &[LstmState],
) -> Result<Vec<Matrix>> {
    let mut out = vec![x.clone()];
    let mut rng = RandomSource::new(0);
    for (i, level) in levels
        .iter()
        .enumerate()
        .take(levels.len().saturating_sub(1))
    {
        let mut g = Graph::new();
        let vars = bind_level(&mut g, *level, &mut None);
        let v = g.constant(out[i].clone());
        let o = level_forward(
            &mut g, *level, &vars, v, &states[i], walkback.k, false, &mut rng,
        )?;
        out.push(g.value(o.h).clone());
    }
    Ok(out)
}

/// Runs every level on frame `x`. Level `i > 0` reads level `i - 1`'s LSTM
/// output as its visible, without detaching it. With `x_next` each level's
/// prediction is scored against the next-step target for its visible. With
/// `with_grads` both loss groups are backpropagated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn stack_step(
    levels: &[LevelRef<'_>],
    walkback: &WalkbackConfig,
    x: &Matrix,
    x_next: Option<&Matrix>,
    states: &[LstmState],
    noisy: bool,
    with_grads: bool,
    rng: &mut RandomSource,
) -> Result<StackStep> {
    if levels.is_empty() || states.len() != levels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} levels but {} recurrent states",
            levels.len(),
            states.len()
        )));
    }
    for (i, level) in levels.iter().enumerate() {
        level.validate()?;
        let want = if i == 0 {
            x.cols()
        } else {
            levels[i - 1].lstm.hidden()
        };
        if level.gsn.visible_width() != want {
            return Err(Error::InvalidArgument(format!(
                "level {i} visible width {} differs from its input width {want}",
                level.gsn.visible_width()
            )));
        }
    }
    let mut g = Graph::new();
    let mut id = with_grads.then_some(0);
    let vars: Vec<LevelVars> = levels
        .iter()
        .map(|l| bind_level(&mut g, *l, &mut id))
        .collect();
    let mut visible = g.constant_ref(x);
    let mut outs = Vec::with_capacity(levels.len());
    let mut recon_terms = Vec::with_capacity(levels.len());
    for (i, level) in levels.iter().enumerate() {
        let steps = if noisy {
            walkback.draw_steps(rng)
        } else {
            walkback.k
        };
        let o = level_forward(
            &mut g, *level, &vars[i], visible, &states[i], steps, noisy, rng,
        )?;
        let kind = level.gsn.loss_kind();
        let terms = o
            .recons
            .iter()
            .map(|&r| g.loss(kind, r, visible))
            .collect::<Result<Vec<_>>>()?;
        recon_terms.push(g.mean(&terms)?);
        visible = o.h;
        outs.push(o);
    }
    let new_states: Vec<LstmState> = outs
        .iter()
        .map(|o| LstmState {
            h: g.value(o.h).clone(),
            c: g.value(o.c).clone(),
        })
        .collect();

    let mut pred_terms = Vec::new();
    if let Some(next) = x_next {
        let targets = clean_targets(levels, walkback, next, &new_states)?;
        for ((level, o), t) in levels.iter().zip(&outs).zip(targets) {
            let tv = g.constant(t);
            pred_terms.push(g.loss(level.gsn.loss_kind(), o.prediction, tv)?);
        }
    }

    let grads = if with_grads {
        let shapes: Vec<(usize, usize)> = levels.iter().flat_map(|l| l.param_shapes()).collect();
        let recon_total = g.sum(&recon_terms)?;
        let rg = g.backward(recon_total)?.into_dense(&shapes);
        let pg = if pred_terms.is_empty() {
            shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect()
        } else {
            let pred_total = g.sum(&pred_terms)?;
            g.backward(pred_total)?.into_dense(&shapes)
        };
        Some((rg, pg))
    } else {
        None
    };

    Ok(StackStep {
        reconstruction: recon_terms.iter().map(|&v| g.scalar(v)).collect(),
        prediction: pred_terms.iter().map(|&v| g.scalar(v)).collect(),
        states: new_states,
        hiddens: outs
            .iter()
            .map(|o| o.hiddens.iter().map(|&h| g.value(h).clone()).collect())
            .collect(),
        reconstructions: outs
            .iter()
            .map(|o| g.value(*o.recons.last().expect("chain has steps")).clone())
            .collect(),
        predicted_hiddens: outs
            .iter()
            .map(|o| o.predicted.iter().map(|&h| g.value(h).clone()).collect())
            .collect(),
        predictions: outs.iter().map(|o| g.value(o.prediction).clone()).collect(),
        grads,
    })
}

/// Sum of the two gradient groups.
pub(crate) fn combine(grads: (Vec<Matrix>, Vec<Matrix>)) -> Result<Vec<Matrix>> {
    let (mut a, b) = grads;
    for (x, y) in a.iter_mut().zip(&b) {
        x.add_assign(y)?;
    }
    Ok(a)
}
