use super::level::{combine, default_taps, stack_step, LevelRef};
use crate::error::{Error, Result};
use crate::gsn::{GsnParams, WalkbackConfig};
use crate::nn::{
    clip_global_norm, DenseLayer, GradClipConfig, LstmCell, LstmState, OptimizerState,
};
use crate::tensor::{Activation, Matrix, NoiseConfig, RandomSource};

#[derive(Clone, Debug, PartialEq)]
pub struct SenLevel {
    pub gsn: GsnParams,
    pub lstm: LstmCell,
    pub taps: Vec<usize>,
    pub projection: DenseLayer,
}

impl SenLevel {
    pub(crate) fn as_ref(&self) -> LevelRef<'_> {
        LevelRef {
            gsn: &self.gsn,
            lstm: &self.lstm,
            taps: &self.taps,
            projection: &self.projection,
        }
    }
}

/// Stack of GSN + LSTM levels; level `i > 0` models the LSTM output sequence
/// of level `i - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SenStack {
    pub levels: Vec<SenLevel>,
    pub walkback: WalkbackConfig,
}

/// Per-level outputs of one forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct SenForward {
    pub hiddens: Vec<Vec<Matrix>>,
    pub reconstructions: Vec<Matrix>,
    pub predicted_hiddens: Vec<Vec<Matrix>>,
    pub states: Vec<LstmState>,
}

/// Loss components of one training step: one reconstruction and (when a
/// next frame exists) one prediction loss per level.
#[derive(Clone, Debug, PartialEq)]
pub struct SenLosses {
    pub reconstruction: Vec<f64>,
    pub prediction: Vec<f64>,
    pub states: Vec<LstmState>,
}

impl SenLosses {
    pub fn components(&self) -> Vec<f64> {
        self.reconstruction
            .iter()
            .chain(&self.prediction)
            .copied()
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.components().iter().sum()
    }
}

impl SenStack {
    /// Level 0 reads the data (`visible_activation`); upper levels read LSTM
    /// outputs through tanh visibles. Every level uses `gsn_layers` hidden
    /// widths and an LSTM of `lstm_hidden` units.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        visible: usize,
        gsn_layers: &[usize],
        lstm_hidden: usize,
        levels: usize,
        noise: NoiseConfig,
        visible_activation: Activation,
        walkback: WalkbackConfig,
        rng: &mut RandomSource,
    ) -> Result<Self> {
        walkback.validate()?;
        if levels == 0 {
            return Err(Error::InvalidArgument(
                "a SEN needs at least one level".into(),
            ));
        }
        let mut out = Vec::with_capacity(levels);
        for i in 0..levels {
            let width = if i == 0 { visible } else { lstm_hidden };
            let act = if i == 0 {
                visible_activation
            } else {
                Activation::Tanh
            };
            let mut sizes = vec![width];
            sizes.extend_from_slice(gsn_layers);
            let gsn = GsnParams::new(&sizes, true, noise, Activation::Tanh, act, rng)?;
            let taps = default_taps(gsn.hidden_layers());
            let tap_width = taps.iter().map(|&t| sizes[t]).sum();
            let lstm = LstmCell::new(tap_width, lstm_hidden, rng);
            let projection =
                DenseLayer::new(lstm_hidden, gsn.hidden_total(), Activation::Tanh, rng);
            out.push(SenLevel {
                gsn,
                lstm,
                taps,
                projection,
            });
        }
        let s = SenStack {
            levels: out,
            walkback,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.levels.iter().enumerate() {
            l.as_ref().validate()?;
            if i > 0 && l.gsn.visible_width() != self.levels[i - 1].lstm.hidden() {
                return Err(Error::InvalidArgument(format!(
                    "level {i} visible width {} differs from level {} LSTM width {}",
                    l.gsn.visible_width(),
                    i - 1,
                    self.levels[i - 1].lstm.hidden()
                )));
            }
        }
        Ok(())
    }

    pub fn initial_states(&self, batch: usize) -> Vec<LstmState> {
        self.levels
            .iter()
            .map(|l| LstmState::zeros(batch, l.lstm.hidden()))
            .collect()
    }

    fn refs(&self) -> Vec<LevelRef<'_>> {
        self.levels.iter().map(SenLevel::as_ref).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.levels.iter().enumerate() {
            for n in l.gsn.param_names() {
                out.push(format!("level{i}.{n}"));
            }
            for n in [
                "lstm.input",
                "lstm.recurrent",
                "lstm.bias",
                "projection.weights",
                "projection.bias",
            ] {
                out.push(format!("level{i}.{n}"));
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.levels {
            out.extend(l.gsn.params());
            out.extend([
                &l.lstm.input_weights,
                &l.lstm.recurrent_weights,
                &l.lstm.bias,
                &l.projection.weights,
                &l.projection.bias,
            ]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.levels {
            out.extend(l.gsn.params_mut());
            out.extend([
                &mut l.lstm.input_weights,
                &mut l.lstm.recurrent_weights,
                &mut l.lstm.bias,
                &mut l.projection.weights,
                &mut l.projection.bias,
            ]);
        }
        out
    }
}

/// Noisy forward pass through every level.
pub fn sen_forward(
    stack: &SenStack,
    x: &Matrix,
    states: &[LstmState],
    rng: &mut RandomSource,
) -> Result<SenForward> {
    let s = stack_step(
        &stack.refs(),
        &stack.walkback,
        x,
        None,
        states,
        true,
        false,
        rng,
    )?;
    Ok(SenForward {
        hiddens: s.hiddens,
        reconstructions: s.reconstructions,
        predicted_hiddens: s.predicted_hiddens,
        states: s.states,
    })
}

/// Loss components with the reconstruction-group and prediction-group
/// gradients kept apart, both in [`SenStack::params`] order.
pub fn sen_term_grads(
    stack: &SenStack,
    x: &Matrix,
    x_next: Option<&Matrix>,
    states: &[LstmState],
    rng: &mut RandomSource,
) -> Result<(SenLosses, Vec<Matrix>, Vec<Matrix>)> {
    let s = stack_step(
        &stack.refs(),
        &stack.walkback,
        x,
        x_next,
        states,
        true,
        true,
        rng,
    )?;
    let (rg, pg) = s.grads.expect("gradients requested");
    Ok((
        SenLosses {
            reconstruction: s.reconstruction,
            prediction: s.prediction,
            states: s.states,
        },
        rg,
        pg,
    ))
}

/// Joint loss and gradient over all levels (reconstruction terms plus
/// prediction terms) in [`SenStack::params`] order.
pub fn sen_loss_and_grads(
    stack: &SenStack,
    x: &Matrix,
    x_next: Option<&Matrix>,
    states: &[LstmState],
    rng: &mut RandomSource,
) -> Result<(SenLosses, Vec<Matrix>)> {
    let (losses, rg, pg) = sen_term_grads(stack, x, x_next, states, rng)?;
    Ok((losses, combine((rg, pg))?))
}

/// One joint, globally clipped optimizer step over every level.
pub fn sen_train_step(
    stack: &mut SenStack,
    x: &Matrix,
    x_next: Option<&Matrix>,
    states: &[LstmState],
    opt: &mut OptimizerState,
    clip: Option<GradClipConfig>,
    rng: &mut RandomSource,
) -> Result<SenLosses> {
    let (losses, mut grads) = sen_loss_and_grads(stack, x, x_next, states, rng)?;
    if let Some(c) = clip {
        clip_global_norm(&mut grads, c);
    }
    opt.apply(&mut stack.params_mut(), &grads)?;
    Ok(losses)
}

/// Noise-free teacher-forced predictor; emits the level-0 prediction.
#[derive(Clone, Debug)]
pub struct SenPredictor<'m> {
    stack: &'m SenStack,
    states: Option<Vec<LstmState>>,
}

impl<'m> SenPredictor<'m> {
    pub fn new(stack: &'m SenStack) -> Self {
        SenPredictor {
            stack,
            states: None,
        }
    }

    pub fn reset(&mut self) {
        self.states = None;
    }

    pub fn observe(&mut self, x: &Matrix) -> Result<Matrix> {
        let states = match self.states.take() {
            Some(s) if s[0].h.rows() == x.rows() => s,
            _ => self.stack.initial_states(x.rows()),
        };
        let s = stack_step(
            &self.stack.refs(),
            &self.stack.walkback,
            x,
            None,
            &states,
            false,
            false,
            &mut RandomSource::new(0),
        )?;
        self.states = Some(s.states);
        Ok(s.predictions
            .into_iter()
            .next()
            .expect("at least one level"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck_report, OptimizerConfig};
    use crate::seq::{rnngsn_train_step, RnnGsnModel};

    fn stack(seed: u64, levels: usize) -> SenStack {
        SenStack::new(
            4,
            &[6, 5],
            5,
            levels,
            NoiseConfig::input_only(0.1).with_hidden_gaussian(0.0, 0.2),
            Activation::Sigmoid,
            WalkbackConfig::fixed(2),
            &mut RandomSource::new(seed),
        )
        .unwrap()
    }

    fn toy_stream(n: usize) -> Vec<Matrix> {
        let pats = [
            [1.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
        ];
        (0..n)
            .map(|t| Matrix::row_vector(pats[t % 4].to_vec()))
            .collect()
    }

    #[test]
    fn output_lengths_match_levels() {
        let s = stack(1, 3);
        let x = &toy_stream(1)[0];
        let f = sen_forward(&s, x, &s.initial_states(1), &mut RandomSource::new(2)).unwrap();
        assert_eq!(f.hiddens.len(), 3);
        assert_eq!(f.reconstructions.len(), 3);
        assert_eq!(f.predicted_hiddens.len(), 3);
        assert_eq!(f.states.len(), 3);
    }

    #[test]
    fn inconsistent_widths_rejected() {
        let mut s = stack(1, 2);
        s.levels[1].gsn = GsnParams::new(
            &[7, 6, 5],
            true,
            NoiseConfig::off(),
            Activation::Tanh,
            Activation::Tanh,
            &mut RandomSource::new(0),
        )
        .unwrap();
        assert!(s.validate().is_err());
        let x = &toy_stream(1)[0];
        assert!(sen_forward(&s, x, &s.initial_states(1), &mut RandomSource::new(2)).is_err());
    }

    #[test]
    fn component_count_is_twice_levels() {
        let s = stack(2, 2);
        let xs = toy_stream(2);
        let (l, _) = sen_loss_and_grads(
            &s,
            &xs[0],
            Some(&xs[1]),
            &s.initial_states(1),
            &mut RandomSource::new(1),
        )
        .unwrap();
        assert_eq!(l.components().len(), 4);
    }

    #[test]
    fn one_level_matches_rnn_gsn() {
        let s = stack(3, 1);
        let l = &s.levels[0];
        let mut rnn = RnnGsnModel {
            gsn: l.gsn.clone(),
            lstm: l.lstm.clone(),
            taps: l.taps.clone(),
            projection: l.projection.clone(),
            walkback: s.walkback,
        };
        let mut sen = s.clone();
        let xs = toy_stream(11);
        let mut o1 = OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut o2 = OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap();
        let (mut r1, mut r2) = (RandomSource::new(9), RandomSource::new(9));
        let clip = Some(GradClipConfig { max_l2_norm: 0.25 });
        let mut st1 = rnn.initial_state(1);
        let mut st2 = sen.initial_states(1);
        for t in 0..10 {
            let a = rnngsn_train_step(
                &mut rnn,
                &xs[t],
                Some(&xs[t + 1]),
                &st1,
                &mut o1,
                clip,
                &mut r1,
            )
            .unwrap();
            let b = sen_train_step(
                &mut sen,
                &xs[t],
                Some(&xs[t + 1]),
                &st2,
                &mut o2,
                clip,
                &mut r2,
            )
            .unwrap();
            assert_eq!(a.reconstruction, b.reconstruction[0]);
            assert_eq!(a.prediction.unwrap(), b.prediction[0]);
            st1 = a.state;
            st2 = b.states;
        }
    }

    /// Each loss group against the parameters it trains. Parameters that
    /// only reach a term through a detached input are held fixed: the
    /// level-0 GSN for upper reconstructions, every GSN and the level-0 LSTM
    /// (which sets the upper targets) for predictions.
    fn check(levels: usize, seed: u64) {
        let s = stack(seed, levels);
        let xs = toy_stream(2);
        let all: Vec<Matrix> = s.params().into_iter().cloned().collect();
        let n0 = s.levels[0].gsn.num_params();
        let (recon_idx, pred_idx): (Vec<usize>, Vec<usize>) = if levels == 1 {
            (Vec::new(), (n0..n0 + 5).collect())
        } else {
            let base = n0 + 5 + s.levels[1].gsn.num_params();
            (
                (n0..all.len()).collect(),
                [n0 + 3, n0 + 4].into_iter().chain(base..base + 5).collect(),
            )
        };
        let mut cases = vec![((0..n0).collect::<Vec<_>>(), false, 0..1)];
        if levels > 1 {
            cases.push((recon_idx, false, 0..levels));
        }
        cases.push((pred_idx, true, 0..levels));
        for (idx, pred, terms) in cases {
            let start: Vec<Matrix> = idx.iter().map(|&i| all[i].clone()).collect();
            let report = gradcheck_report(
                |ps| {
                    let mut q = s.clone();
                    {
                        let mut qp = q.params_mut();
                        for (&i, v) in idx.iter().zip(ps) {
                            *qp[i] = v.clone();
                        }
                    }
                    let r = stack_step(
                        &q.refs(),
                        &q.walkback,
                        &xs[0],
                        Some(&xs[1]),
                        &q.initial_states(1),
                        true,
                        true,
                        &mut RandomSource::new(3),
                    )?;
                    let (rg, pg) = r.grads.unwrap();
                    let (loss, g) = if pred {
                        (r.prediction[terms.clone()].iter().sum(), pg)
                    } else {
                        (r.reconstruction[terms.clone()].iter().sum(), rg)
                    };
                    Ok((loss, idx.iter().map(|&i| g[i].clone()).collect()))
                },
                &start,
                1e-5,
                usize::MAX,
            )
            .unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "levels {levels} pred {pred} terms {terms:?}: {report:?}"
            );
        }
    }

    #[test]
    fn one_level_gradcheck() {
        check(1, 4);
    }

    #[test]
    fn two_level_gradcheck() {
        check(2, 5);
    }

    #[test]
    fn two_level_smoke_stays_finite() {
        let mut s = stack(6, 2);
        let xs = toy_stream(101);
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.001)).unwrap();
        let mut rng = RandomSource::new(1);
        let mut st = s.initial_states(1);
        for t in 0..100 {
            let l = sen_train_step(
                &mut s,
                &xs[t],
                Some(&xs[t + 1]),
                &st,
                &mut opt,
                Some(GradClipConfig { max_l2_norm: 0.25 }),
                &mut rng,
            )
            .unwrap();
            assert!(l.components().iter().all(|v| v.is_finite()));
            st = l.states;
        }
    }
}
