use crate::error::{Error, Result};
use crate::nn::{
    clip_global_norm, dense_backward, dense_forward, lstm_step, lstm_step_backward, DenseCache,
    DenseLayer, GradClipConfig, LossKind, LstmCache, LstmCell, LstmState, OptimizerState,
};
use crate::tensor::{Activation, Matrix, RandomSource};

/// Stacked LSTM with a dense read-out predicting the next frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmBaseline {
    pub layers: Vec<LstmCell>,
    pub head: DenseLayer,
}

impl LstmBaseline {
    /// `output` is sigmoid for binary frames, identity for real-valued ones.
    pub fn new(
        visible: usize,
        hidden: &[usize],
        output: Activation,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || visible == 0 {
            return Err(Error::InvalidArgument(format!(
                "LSTM baseline needs positive widths, got visible {visible} hidden {hidden:?}"
            )));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = visible;
        for &h in hidden {
            layers.push(LstmCell::new(width, h, rng));
            width = h;
        }
        let head = DenseLayer::new(width, visible, output, rng);
        Ok(LstmBaseline { layers, head })
    }

    pub fn visible_width(&self) -> usize {
        self.head.outputs()
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.head.activation {
            Activation::Sigmoid => LossKind::Bce,
            _ => LossKind::Mse,
        }
    }

    pub fn initial_states(&self, batch: usize) -> Vec<LstmState> {
        self.layers
            .iter()
            .map(|l| LstmState::zeros(batch, l.hidden()))
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.layers.len() {
            for n in ["input", "recurrent", "bias"] {
                out.push(format!("lstm{i}.{n}"));
            }
        }
        out.extend(["head.weights".to_string(), "head.bias".to_string()]);
        out
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::new();
        for l in &self.layers {
            out.extend([&l.input_weights, &l.recurrent_weights, &l.bias]);
        }
        out.extend([&self.head.weights, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for l in &mut self.layers {
            out.extend([&mut l.input_weights, &mut l.recurrent_weights, &mut l.bias]);
        }
        out.extend([&mut self.head.weights, &mut self.head.bias]);
        out
    }

    fn check_states(&self, states: &[LstmState], batch: usize) -> Result<()> {
        if states.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layers but {} states",
                self.layers.len(),
                states.len()
            )));
        }
        for (l, s) in self.layers.iter().zip(states) {
            if s.h.shape() != (batch, l.hidden()) {
                return Err(Error::shape(
                    "lstm baseline state",
                    s.h.shape(),
                    (batch, l.hidden()),
                ));
            }
        }
        Ok(())
    }
}

struct StepCache {
    lstm: Vec<LstmCache>,
    head: DenseCache,
}

fn forward(
    model: &LstmBaseline,
    x: &Matrix,
    states: &[LstmState],
) -> Result<(Matrix, Vec<LstmState>, StepCache)> {
    if x.cols() != model.visible_width() {
        return Err(Error::shape(
            "lstm baseline input",
            x.shape(),
            (x.rows(), model.visible_width()),
        ));
    }
    model.check_states(states, x.rows())?;
    let mut input = x.clone();
    let mut next = Vec::with_capacity(states.len());
    let mut caches = Vec::with_capacity(states.len());
    for (cell, s) in model.layers.iter().zip(states) {
        let (ns, cache) = lstm_step(cell, &input, s)?;
        input = ns.h.clone();
        next.push(ns);
        caches.push(cache);
    }
    let (pred, head) = dense_forward(&model.head, &input)?;
    Ok((pred, next, StepCache { lstm: caches, head }))
}

/// Prediction of the frame after `x` and the updated states.
pub fn lstm_baseline_step(
    model: &LstmBaseline,
    x: &Matrix,
    states: &[LstmState],
) -> Result<(Matrix, Vec<LstmState>)> {
    let (p, s, _) = forward(model, x, states)?;
    Ok((p, s))
}

/// Mean next-frame loss over `seq[1..]` with teacher forcing from `states`,
/// its BPTT gradient in [`LstmBaseline::params`] order, and the final states.
pub fn lstm_baseline_loss_and_grads(
    model: &LstmBaseline,
    seq: &[Matrix],
    states: &[LstmState],
) -> Result<(f64, Vec<Matrix>, Vec<LstmState>)> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            index: 0,
            len: seq.len(),
            min: 2,
        });
    }
    let steps = seq.len() - 1;
    let kind = model.loss_kind();
    let mut cur = states.to_vec();
    let mut caches = Vec::with_capacity(steps);
    let mut upstream = Vec::with_capacity(steps);
    let mut total = 0.0;
    for t in 0..steps {
        let (pred, next, cache) = forward(model, &seq[t], &cur)?;
        let (l, g) = kind.eval(&pred, &seq[t + 1])?;
        total += l;
        upstream.push(g.scale(1.0 / steps as f64));
        caches.push(cache);
        cur = next;
    }

    let mut grads: Vec<Matrix> = model
        .params()
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    let n_lstm = 3 * model.layers.len();
    let mut carry: Vec<LstmState> = cur
        .iter()
        .map(|s| LstmState::zeros(s.h.rows(), s.h.cols()))
        .collect();
    for t in (0..steps).rev() {
        let (mut d, hg) = dense_backward(&model.head, &caches[t].head, &upstream[t])?;
        grads[n_lstm].add_assign(&hg.weights)?;
        grads[n_lstm + 1].add_assign(&hg.bias)?;
        for (i, cell) in model.layers.iter().enumerate().rev() {
            let d_h = d.add(&carry[i].h)?;
            let (dx, prev, lg) = lstm_step_backward(cell, &caches[t].lstm[i], &d_h, &carry[i].c)?;
            grads[3 * i].add_assign(&lg.input_weights)?;
            grads[3 * i + 1].add_assign(&lg.recurrent_weights)?;
            grads[3 * i + 2].add_assign(&lg.bias)?;
            carry[i] = prev;
            d = dx;
        }
    }
    Ok((total / steps as f64, grads, cur))
}

/// One clipped optimizer step on a subsequence; returns the loss and the
/// final states (for carrying across consecutive chunks).
pub fn lstm_baseline_train_step(
    model: &mut LstmBaseline,
    seq: &[Matrix],
    states: &[LstmState],
    opt: &mut OptimizerState,
    clip: Option<GradClipConfig>,
) -> Result<(f64, Vec<LstmState>)> {
    let (loss, mut grads, last) = lstm_baseline_loss_and_grads(model, seq, states)?;
    if let Some(c) = clip {
        clip_global_norm(&mut grads, c);
    }
    opt.apply(&mut model.params_mut(), &grads)?;
    Ok((loss, last))
}

#[derive(Clone, Debug)]
pub struct LstmPredictor<'m> {
    model: &'m LstmBaseline,
    states: Option<Vec<LstmState>>,
}

impl<'m> LstmPredictor<'m> {
    pub fn new(model: &'m LstmBaseline) -> Self {
        LstmPredictor {
            model,
            states: None,
        }
    }

    pub fn reset(&mut self) {
        self.states = None;
    }

    pub fn observe(&mut self, x: &Matrix) -> Result<Matrix> {
        let states = match self.states.take() {
            Some(s) if s[0].h.rows() == x.rows() => s,
            _ => self.model.initial_states(x.rows()),
        };
        let (p, s) = lstm_baseline_step(self.model, x, &states)?;
        self.states = Some(s);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, mse_loss, OptimizerConfig};
    use crate::tensor::gaussian;

    #[test]
    fn zero_params_predict_half() {
        let mut m =
            LstmBaseline::new(5, &[4, 3], Activation::Sigmoid, &mut RandomSource::new(1)).unwrap();
        for p in m.params_mut() {
            p.scale_in_place(0.0);
        }
        let (p, _) =
            lstm_baseline_step(&m, &Matrix::filled(2, 5, 1.0), &m.initial_states(2)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bptt_gradcheck() {
        for seed in 0..5 {
            let mut rng = RandomSource::new(seed);
            for act in [Activation::Sigmoid, Activation::Identity] {
                let m = LstmBaseline::new(4, &[5, 3], act, &mut rng).unwrap();
                let seq: Vec<Matrix> = (0..5)
                    .map(|_| gaussian(2, 4, 0.5, 0.2, &mut rng).unwrap())
                    .collect();
                let states = vec![
                    LstmState {
                        h: gaussian(2, 5, 0.0, 0.3, &mut rng).unwrap(),
                        c: gaussian(2, 5, 0.0, 0.3, &mut rng).unwrap(),
                    },
                    LstmState::zeros(2, 3),
                ];
                let params: Vec<Matrix> = m.params().into_iter().cloned().collect();
                let err = gradcheck(
                    |ps| {
                        let mut q = m.clone();
                        for (d, s) in q.params_mut().into_iter().zip(ps) {
                            *d = s.clone();
                        }
                        let (l, g, _) = lstm_baseline_loss_and_grads(&q, &seq, &states)?;
                        Ok((l, g))
                    },
                    &params,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "seed {seed} {act:?}: {err}");
            }
        }
    }

    #[test]
    fn chunked_states_carry_over() {
        let mut rng = RandomSource::new(3);
        let m = LstmBaseline::new(3, &[4], Activation::Identity, &mut rng).unwrap();
        let seq: Vec<Matrix> = (0..7)
            .map(|_| gaussian(1, 3, 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let (_, _, whole) = lstm_baseline_loss_and_grads(&m, &seq, &m.initial_states(1)).unwrap();
        let (_, _, mid) =
            lstm_baseline_loss_and_grads(&m, &seq[..4], &m.initial_states(1)).unwrap();
        let (_, _, end) = lstm_baseline_loss_and_grads(&m, &seq[3..], &mid).unwrap();
        assert_eq!(whole, end);
    }

    #[test]
    fn learns_constant_stream() {
        let mut rng = RandomSource::new(4);
        let mut m = LstmBaseline::new(3, &[6], Activation::Identity, &mut rng).unwrap();
        let x = Matrix::row_vector(vec![0.3, -0.2, 0.8]);
        let seq = vec![x.clone(); 6];
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.02)).unwrap();
        for _ in 0..400 {
            {
                let s0 = m.initial_states(1);
                lstm_baseline_train_step(&mut m, &seq, &s0, &mut opt, None).unwrap();
            }
        }
        let mut p = LstmPredictor::new(&m);
        for _ in 0..4 {
            let y = p.observe(&x).unwrap();
            assert!(mse_loss(&y, &x).unwrap().0 < 1e-3);
        }
    }

    #[test]
    fn alternation_beats_copy_last() {
        let mut rng = RandomSource::new(5);
        let mut m = LstmBaseline::new(2, &[6], Activation::Identity, &mut rng).unwrap();
        let a = Matrix::row_vector(vec![1.0, -1.0]);
        let b = Matrix::row_vector(vec![-1.0, 1.0]);
        let seq: Vec<Matrix> = (0..8)
            .map(|i| if i % 2 == 0 { a.clone() } else { b.clone() })
            .collect();
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.02)).unwrap();
        for _ in 0..300 {
            {
                let s0 = m.initial_states(1);
                lstm_baseline_train_step(
                    &mut m,
                    &seq,
                    &s0,
                    &mut opt,
                    Some(GradClipConfig { max_l2_norm: 1.0 }),
                )
                .unwrap();
            }
        }
        let mut p = LstmPredictor::new(&m);
        let (mut model_err, mut copy_err) = (0.0, 0.0);
        for t in 0..seq.len() - 1 {
            model_err += mse_loss(&p.observe(&seq[t]).unwrap(), &seq[t + 1])
                .unwrap()
                .0;
            copy_err += mse_loss(&seq[t], &seq[t + 1]).unwrap().0;
        }
        assert!(model_err < 0.2 * copy_err, "{model_err} vs {copy_err}");
    }
}
