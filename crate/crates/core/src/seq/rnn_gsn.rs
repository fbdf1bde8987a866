use super::level::{combine, default_taps, stack_step, LevelRef};
use crate::error::Result;
use crate::gsn::{GsnParams, WalkbackConfig};
use crate::nn::{
    clip_global_norm, DenseLayer, GradClipConfig, LstmCell, LstmState, OptimizerState,
};
use crate::tensor::{Activation, Matrix, RandomSource};

/// GSN whose tapped hidden layers drive an LSTM; the LSTM output is projected
/// to a predicted hidden stack and decoded into the next frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnGsnModel {
    pub gsn: GsnParams,
    pub lstm: LstmCell,
    pub taps: Vec<usize>,
    pub projection: DenseLayer,
    pub walkback: WalkbackConfig,
}

impl RnnGsnModel {
    /// `taps` defaults to [`default_taps`].
    pub fn new(
        gsn: GsnParams,
        lstm_hidden: usize,
        taps: Option<Vec<usize>>,
        walkback: WalkbackConfig,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        walkback.validate()?;
        let taps = taps.unwrap_or_else(|| default_taps(gsn.hidden_layers()));
        let tap_width = taps
            .iter()
            .map(|&t| gsn.layer_sizes.get(t).copied().unwrap_or(0))
            .sum();
        let lstm = LstmCell::new(tap_width, lstm_hidden, rng);
        let projection = DenseLayer::new(lstm_hidden, gsn.hidden_total(), Activation::Tanh, rng);
        let m = RnnGsnModel {
            gsn,
            lstm,
            taps,
            projection,
            walkback,
        };
        m.level().validate()?;
        Ok(m)
    }

    pub(crate) fn level(&self) -> LevelRef<'_> {
        LevelRef {
            gsn: &self.gsn,
            lstm: &self.lstm,
            taps: &self.taps,
            projection: &self.projection,
        }
    }

    pub fn initial_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(batch, self.lstm.hidden())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.gsn.param_names();
        n.extend(
            [
                "lstm.input",
                "lstm.recurrent",
                "lstm.bias",
                "projection.weights",
                "projection.bias",
            ]
            .map(String::from),
        );
        n
    }

    /// GSN parameters, then LSTM, then projection.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.gsn.params();
        p.extend([
            &self.lstm.input_weights,
            &self.lstm.recurrent_weights,
            &self.lstm.bias,
            &self.projection.weights,
            &self.projection.bias,
        ]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.gsn.params_mut();
        p.extend([
            &mut self.lstm.input_weights,
            &mut self.lstm.recurrent_weights,
            &mut self.lstm.bias,
            &mut self.projection.weights,
            &mut self.projection.bias,
        ]);
        p
    }
}

/// Losses of one step with the gradient of each term kept apart.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnGsnGrads {
    pub reconstruction: f64,
    pub prediction: Option<f64>,
    pub reconstruction_grads: Vec<Matrix>,
    pub prediction_grads: Vec<Matrix>,
    pub state: LstmState,
}

pub fn rnngsn_loss_and_grads(
    model: &RnnGsnModel,
    x: &Matrix,
    x_next: Option<&Matrix>,
    state: &LstmState,
    rng: &mut RandomSource,
) -> Result<RnnGsnGrads> {
    let s = stack_step(
        &[model.level()],
        &model.walkback,
        x,
        x_next,
        std::slice::from_ref(state),
        true,
        true,
        rng,
    )?;
    let (rg, pg) = s.grads.expect("gradients requested");
    Ok(RnnGsnGrads {
        reconstruction: s.reconstruction[0],
        prediction: s.prediction.first().copied(),
        reconstruction_grads: rg,
        prediction_grads: pg,
        state: s.states.into_iter().next().expect("one level"),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnGsnStep {
    pub reconstruction: f64,
    pub prediction: Option<f64>,
    pub state: LstmState,
}

/// Walkback loss on `x` trains the GSN; the loss of the decoded prediction
/// against `x_next` trains the LSTM and projection (the GSN is a constant in
/// that term, the LSTM input a detached copy of the hiddens). Both gradients
/// share one clipped optimizer step. The prediction term is skipped when
/// `x_next` is absent.
pub fn rnngsn_train_step(
    model: &mut RnnGsnModel,
    x: &Matrix,
    x_next: Option<&Matrix>,
    state: &LstmState,
    opt: &mut OptimizerState,
    clip: Option<GradClipConfig>,
    rng: &mut RandomSource,
) -> Result<RnnGsnStep> {
    let r = rnngsn_loss_and_grads(model, x, x_next, state, rng)?;
    let mut grads = combine((r.reconstruction_grads, r.prediction_grads))?;
    if let Some(c) = clip {
        clip_global_norm(&mut grads, c);
    }
    opt.apply(&mut model.params_mut(), &grads)?;
    Ok(RnnGsnStep {
        reconstruction: r.reconstruction,
        prediction: r.prediction,
        state: r.state,
    })
}

/// Noise-free teacher-forced next-frame predictor.
#[derive(Clone, Debug)]
pub struct RnnGsnPredictor<'m> {
    model: &'m RnnGsnModel,
    state: Option<LstmState>,
}

impl<'m> RnnGsnPredictor<'m> {
    pub fn new(model: &'m RnnGsnModel) -> Self {
        RnnGsnPredictor { model, state: None }
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn observe(&mut self, x: &Matrix) -> Result<Matrix> {
        let state = match self.state.take() {
            Some(s) if s.h.rows() == x.rows() => s,
            _ => self.model.initial_state(x.rows()),
        };
        let s = stack_step(
            &[self.model.level()],
            &self.model.walkback,
            x,
            None,
            std::slice::from_ref(&state),
            false,
            false,
            &mut RandomSource::new(0),
        )?;
        self.state = s.states.into_iter().next();
        Ok(s.predictions.into_iter().next().expect("one level"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bce_loss, gradcheck_report, OptimizerConfig};
    use crate::tensor::NoiseConfig;

    pub(crate) fn model(seed: u64, visible: usize, layers: &[usize]) -> RnnGsnModel {
        let mut rng = RandomSource::new(seed);
        let mut sizes = vec![visible];
        sizes.extend_from_slice(layers);
        let gsn = GsnParams::new(
            &sizes,
            true,
            NoiseConfig::input_only(0.1).with_hidden_gaussian(0.0, 0.2),
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        RnnGsnModel::new(gsn, 6, None, WalkbackConfig::fixed(2), &mut rng).unwrap()
    }

    fn frame(bits: &[u8]) -> Matrix {
        Matrix::row_vector(bits.iter().map(|&b| b as f64).collect())
    }

    #[test]
    fn taps_default() {
        assert_eq!(default_taps(1), [1]);
        assert_eq!(default_taps(2), [1]);
        assert_eq!(default_taps(3), [1, 3]);
        assert_eq!(default_taps(4), [1, 3]);
        let m = model(1, 4, &[5, 4, 3]);
        assert_eq!(m.lstm.inputs(), 8);
        assert_eq!(m.projection.outputs(), 12);
    }

    #[test]
    fn terms_touch_disjoint_parameters() {
        let m = model(2, 4, &[5, 4, 3]);
        let x = frame(&[1, 0, 1, 1]);
        let y = frame(&[0, 1, 1, 0]);
        let r = rnngsn_loss_and_grads(
            &m,
            &x,
            Some(&y),
            &m.initial_state(1),
            &mut RandomSource::new(3),
        )
        .unwrap();
        let n_gsn = m.gsn.num_params();
        assert!(r.reconstruction_grads[n_gsn..]
            .iter()
            .all(|g| g.max_abs() == 0.0));
        assert!(r.prediction_grads[..n_gsn]
            .iter()
            .all(|g| g.max_abs() == 0.0));
        assert!(r.prediction_grads[n_gsn..]
            .iter()
            .any(|g| g.max_abs() > 0.0));
    }

    #[test]
    fn missing_next_skips_prediction() {
        let mut m = model(3, 4, &[5]);
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap();
        let before = m.clone();
        let s = rnngsn_train_step(
            &mut m,
            &frame(&[1, 0, 1, 1]),
            None,
            &before.initial_state(1),
            &mut opt,
            None,
            &mut RandomSource::new(1),
        )
        .unwrap();
        assert_eq!(s.prediction, None);
        // Adam with zero gradient leaves the LSTM and projection untouched.
        let n = m.gsn.num_params();
        for (a, b) in m.params()[n..].iter().zip(&before.params()[n..]) {
            assert_eq!(a, b);
        }
    }

    /// Each term is checked only against the parameters it trains; the
    /// other group is held fixed.
    #[test]
    fn per_term_gradcheck() {
        for seed in 0..5 {
            let m = model(10 + seed, 4, &[5, 4, 3]);
            let n = m.gsn.num_params();
            let x = frame(&[1, 0, 1, 1]);
            let y = frame(&[0, 1, 1, 0]);
            let mut rng = RandomSource::new(seed);
            let state = LstmState {
                h: crate::tensor::gaussian(1, 6, 0.0, 0.3, &mut rng).unwrap(),
                c: crate::tensor::gaussian(1, 6, 0.0, 0.3, &mut rng).unwrap(),
            };
            let all: Vec<Matrix> = m.params().into_iter().cloned().collect();
            for (range, pred) in [(0..n, false), (n..n + 5, true)] {
                let report = gradcheck_report(
                    |ps| {
                        let mut q = m.clone();
                        for (d, s) in q.params_mut()[range.clone()].iter_mut().zip(ps) {
                            **d = s.clone();
                        }
                        let r = rnngsn_loss_and_grads(
                            &q,
                            &x,
                            Some(&y),
                            &state,
                            &mut RandomSource::new(5),
                        )?;
                        Ok(if pred {
                            (
                                r.prediction.unwrap(),
                                r.prediction_grads[range.clone()].to_vec(),
                            )
                        } else {
                            (
                                r.reconstruction,
                                r.reconstruction_grads[range.clone()].to_vec(),
                            )
                        })
                    },
                    &all[range.clone()],
                    1e-5,
                    usize::MAX,
                )
                .unwrap();
                assert!(
                    report.max_rel_error < 1e-4,
                    "seed {seed} pred {pred}: {report:?}"
                );
            }
        }
    }

    fn train(m: &mut RnnGsnModel, seq: &[Matrix], epochs: usize, seed: u64) {
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut rng = RandomSource::new(seed);
        for _ in 0..epochs {
            let mut state = m.initial_state(1);
            for t in 0..seq.len() {
                state = rnngsn_train_step(
                    m,
                    &seq[t],
                    seq.get(t + 1),
                    &state,
                    &mut opt,
                    Some(GradClipConfig { max_l2_norm: 1.0 }),
                    &mut rng,
                )
                .unwrap()
                .state;
            }
        }
    }

    #[test]
    fn constant_sequence_prediction_matches_reconstruction() {
        let mut m = model(4, 8, &[12, 10]);
        let x = frame(&[1, 1, 0, 0, 1, 0, 1, 0]);
        let seq = vec![x.clone(); 8];
        train(&mut m, &seq, 80, 5);
        let mut p = RnnGsnPredictor::new(&m);
        let (mut pred, mut recon) = (0.0, 0.0);
        for t in 0..seq.len() - 1 {
            pred += bce_loss(&p.observe(&seq[t]).unwrap(), &seq[t + 1])
                .unwrap()
                .0;
            let (r, _) = crate::gsn::gsn_reconstruct_clean(&m.gsn, &seq[t], m.walkback.k).unwrap();
            recon += bce_loss(&r, &seq[t]).unwrap().0;
        }
        assert!(
            (pred - recon).abs() <= 0.1 * recon.max(pred),
            "pred {pred} recon {recon}"
        );
    }

    #[test]
    fn alternation_predicts_the_other_symbol() {
        let mut m = model(6, 8, &[12, 10]);
        let a = frame(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let b = frame(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let seq: Vec<Matrix> = (0..10)
            .map(|i| if i % 2 == 0 { a.clone() } else { b.clone() })
            .collect();
        train(&mut m, &seq, 80, 7);
        let mut p = RnnGsnPredictor::new(&m);
        p.observe(&b).unwrap();
        let after_a = p.observe(&a).unwrap();
        assert!(bce_loss(&after_a, &b).unwrap().0 < bce_loss(&after_a, &a).unwrap().0);
    }
}
