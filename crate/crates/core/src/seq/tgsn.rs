use super::LinearTransition;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::gsn::{decode, run_chain, zero_hiddens, GsnParams, GsnVars, WalkbackConfig};
use crate::nn::{clip_global_norm, GradClipConfig, OptimizerState};
use crate::tensor::{Matrix, RandomSource};

/// GSN plus a windowed linear transition between its hidden stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct TgsnModel {
    pub gsn: GsnParams,
    pub transition: LinearTransition,
    pub walkback: WalkbackConfig,
}

impl TgsnModel {
    pub fn new(gsn: GsnParams, window: usize, walkback: WalkbackConfig) -> Result<Self> {
        walkback.validate()?;
        let transition = LinearTransition::new(window, gsn.hidden_widths())?;
        Ok(TgsnModel {
            gsn,
            transition,
            walkback,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TgsnEpochLosses {
    /// Mean walkback reconstruction loss of the GSN pass.
    pub reconstruction: f64,
    /// Mean loss of the predicted next frame during the transition pass.
    pub prediction: f64,
}

/// Which parameter group one EM pass updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TgsnPhase {
    Gsn,
    Transition,
}

struct StepOut {
    recon: f64,
    pred: Option<f64>,
    hiddens: Vec<Matrix>,
    grads: Option<Vec<Matrix>>,
}

/// Chain started from a predicted hidden stack: decode it, then continue
/// freely for the remaining steps.
#[allow(clippy::too_many_arguments)]
fn predicted_chain(
    g: &mut Graph<'_>,
    gsn: &GsnParams,
    gv: &GsnVars,
    predicted: Vec<Var>,
    steps: usize,
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<Vec<Var>> {
    let first = decode(g, gsn, gv, predicted[0])?;
    let rest = run_chain(g, gsn, gv, first, predicted, steps - 1, false, noisy, rng)?;
    let mut out = vec![first];
    out.extend(rest.recons);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn step(
    model: &TgsnModel,
    past: &[Vec<Matrix>],
    x: &Matrix,
    next: Option<&Matrix>,
    phase: TgsnPhase,
    include_prediction: bool,
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<StepOut> {
    let gsn = &model.gsn;
    let t = &model.transition;
    let steps = if noisy {
        model.walkback.draw_steps(rng)
    } else {
        model.walkback.k
    };
    let mut g = Graph::new();
    let gv = gsn.bind(&mut g, (phase == TgsnPhase::Gsn).then_some(0));
    let tv = t.bind(&mut g, (phase == TgsnPhase::Transition).then_some(0));
    let xv = g.constant_ref(x);
    let h0 = zero_hiddens(&mut g, gsn, x.rows());
    let chain = run_chain(&mut g, gsn, &gv, xv, h0, steps, true, noisy, rng)?;
    let kind = gsn.loss_kind();
    let recon_terms = chain
        .recons
        .iter()
        .map(|&r| g.loss(kind, r, xv))
        .collect::<Result<Vec<_>>>()?;
    let recon = g.mean(&recon_terms)?;
    let hiddens: Vec<Matrix> = chain.hiddens.iter().map(|&h| g.value(h).clone()).collect();

    let wants_prediction = match phase {
        TgsnPhase::Gsn => include_prediction,
        TgsnPhase::Transition => true,
    };
    let mut pred = None;
    let mut loss = (phase == TgsnPhase::Gsn).then_some(recon);
    if let (Some(next), true) = (next, wants_prediction) {
        let keep = t.window - 1;
        let have = past.len().min(keep);
        let mut hist: Vec<Vec<Var>> = Vec::with_capacity(t.window);
        for _ in have..keep {
            hist.push(zero_hiddens(&mut g, gsn, x.rows()));
        }
        for stack in &past[past.len() - have..] {
            hist.push(stack.iter().map(|m| g.constant_ref(m)).collect());
        }
        hist.push(chain.hiddens.clone());
        let predicted = t.predict_graph(&mut g, tv, &hist)?;
        let recons = predicted_chain(&mut g, gsn, &gv, predicted, steps, noisy, rng)?;
        let nv = g.constant_ref(next);
        let p = match phase {
            TgsnPhase::Gsn => {
                let terms = recons
                    .iter()
                    .map(|&r| g.loss(kind, r, nv))
                    .collect::<Result<Vec<_>>>()?;
                let p = g.mean(&terms)?;
                loss = Some(g.add(recon, p)?);
                p
            }
            TgsnPhase::Transition => {
                let p = g.loss(kind, *recons.last().expect("chain has steps"), nv)?;
                loss = Some(p);
                p
            }
        };
        pred = Some(g.scalar(p));
    }
    let grads = match loss {
        Some(l) => {
            let shapes = match phase {
                TgsnPhase::Gsn => gsn.param_shapes(),
                TgsnPhase::Transition => t.param_shapes(),
            };
            Some(g.backward(l)?.into_dense(&shapes))
        }
        None => None,
    };
    Ok(StepOut {
        recon: g.scalar(recon),
        pred,
        hiddens,
        grads,
    })
}

fn check_timelines(model: &TgsnModel, data: &[Vec<Matrix>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training sequences".into()));
    }
    for (i, seq) in data.iter().enumerate() {
        if seq.len() < 2 {
            return Err(Error::SequenceTooShort {
                index: i,
                len: seq.len(),
                min: 2,
            });
        }
        for x in seq {
            if x.cols() != model.gsn.visible_width() {
                return Err(Error::shape(
                    "tgsn",
                    x.shape(),
                    (x.rows(), model.gsn.visible_width()),
                ));
            }
        }
    }
    Ok(())
}

/// One EM epoch over `data` (each entry a timeline of `batch × width` frames,
/// rows being parallel streams).
///
/// Loss and gradient of one EM step on `x` after the hidden stacks `past`.
/// The GSN pass returns the walkback loss (plus the predicted-next loss
/// when `include_prediction` is set) against the GSN parameters; the
/// transition pass returns the last predicted-next loss against the
/// transition parameters.
#[allow(clippy::too_many_arguments)]
pub fn tgsn_step_loss_and_grads(
    model: &TgsnModel,
    past: &[Vec<Matrix>],
    x: &Matrix,
    next: Option<&Matrix>,
    transition_pass: bool,
    include_prediction: bool,
    rng: &mut RandomSource,
) -> Result<(f64, Vec<Matrix>)> {
    let phase = if transition_pass {
        TgsnPhase::Transition
    } else {
        TgsnPhase::Gsn
    };
    let s = step(model, past, x, next, phase, include_prediction, true, rng)?;
    let grads = s
        .grads
        .ok_or_else(|| Error::InvalidArgument("the transition pass needs a next frame".into()))?;
    let loss = match phase {
        TgsnPhase::Gsn => s.recon + s.pred.unwrap_or(0.0),
        TgsnPhase::Transition => s.pred.expect("prediction scored"),
    };
    Ok((loss, grads))
}

/// Pass 1 updates only the GSN on its walkback loss, plus the predicted-next
/// chain loss when `include_prediction` is set. Pass 2 updates only the
/// transition on the loss of the last predicted-next reconstruction; its
/// gradient reaches the transition through the frozen GSN decoder.
pub fn tgsn_em_epoch(
    model: &mut TgsnModel,
    data: &[Vec<Matrix>],
    include_prediction: bool,
    gsn_opt: &mut OptimizerState,
    transition_opt: &mut OptimizerState,
    clip: Option<GradClipConfig>,
    rng: &mut RandomSource,
) -> Result<TgsnEpochLosses> {
    Ok(TgsnEpochLosses {
        reconstruction: tgsn_em_pass(model, data, TgsnPhase::Gsn, include_prediction, gsn_opt, clip, rng)?,
        prediction: tgsn_em_pass(model, data, TgsnPhase::Transition, include_prediction, transition_opt, clip, rng)?,
    })
}

/// One of the two passes of [`tgsn_em_epoch`]; `opt` belongs to the group
/// `phase` updates. With `clip`, each update's gradients are clipped to the
/// global norm first. Returns the pass's mean loss.
pub fn tgsn_em_pass(
    model: &mut TgsnModel,
    data: &[Vec<Matrix>],
    phase: TgsnPhase,
    include_prediction: bool,
    opt: &mut OptimizerState,
    clip: Option<GradClipConfig>,
    rng: &mut RandomSource,
) -> Result<f64> {
    check_timelines(model, data)?;
    let keep = model.transition.window - 1;
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in data {
        let mut past: Vec<Vec<Matrix>> = Vec::new();
        for t in 0..seq.len() {
            let s = step(
                model,
                &past,
                &seq[t],
                seq.get(t + 1),
                phase,
                include_prediction,
                true,
                rng,
            )?;
            match phase {
                TgsnPhase::Gsn => {
                    total += s.recon;
                    count += 1;
                }
                TgsnPhase::Transition => {
                    if let Some(p) = s.pred {
                        total += p;
                        count += 1;
                    }
                }
            }
            if let Some(mut grads) = s.grads {
                if let Some(c) = clip {
                    clip_global_norm(&mut grads, c);
                }
                match phase {
                    TgsnPhase::Gsn => opt.apply(&mut model.gsn.params_mut(), &grads)?,
                    TgsnPhase::Transition => opt.apply(&mut model.transition.params_mut(), &grads)?,
                }
            }
            past.push(s.hiddens);
            if past.len() > keep {
                past.remove(0);
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Opens once some epoch improved the reconstruction loss by a relative
/// amount below `threshold`. Needs at least two epochs of history.
pub fn tgsn_warmup_gate(history: &[f64], threshold: f64) -> bool {
    history.windows(2).any(|w| {
        let (prev, cur) = (w[0], w[1]);
        let rel = if prev.abs() > 0.0 {
            (prev - cur) / prev.abs()
        } else {
            0.0
        };
        rel < threshold
    })
}

/// Noise-free teacher-forced next-frame predictor.
#[derive(Clone, Debug)]
pub struct TgsnPredictor<'m> {
    model: &'m TgsnModel,
    past: Vec<Vec<Matrix>>,
}

impl<'m> TgsnPredictor<'m> {
    pub fn new(model: &'m TgsnModel) -> Self {
        TgsnPredictor {
            model,
            past: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.past.clear();
    }

    /// Consumes frame `x_t` and returns the predicted `x_{t+1}`.
    pub fn observe(&mut self, x: &Matrix) -> Result<Matrix> {
        let model = self.model;
        let gsn = &model.gsn;
        let t = &model.transition;
        let mut rng = RandomSource::new(0);
        let mut g = Graph::new();
        let gv = gsn.bind(&mut g, None);
        let tv = t.bind(&mut g, None);
        let xv = g.constant_ref(x);
        let h0 = zero_hiddens(&mut g, gsn, x.rows());
        let chain = run_chain(
            &mut g,
            gsn,
            &gv,
            xv,
            h0,
            model.walkback.k,
            true,
            false,
            &mut rng,
        )?;
        let hiddens: Vec<Matrix> = chain.hiddens.iter().map(|&h| g.value(h).clone()).collect();
        let keep = t.window - 1;
        let have = self.past.len().min(keep);
        let mut hist: Vec<Vec<Var>> = Vec::new();
        for _ in have..keep {
            hist.push(zero_hiddens(&mut g, gsn, x.rows()));
        }
        for stack in &self.past[self.past.len() - have..] {
            hist.push(stack.iter().map(|m| g.constant(m.clone())).collect());
        }
        hist.push(chain.hiddens);
        let predicted = t.predict_graph(&mut g, tv, &hist)?;
        let recons = predicted_chain(
            &mut g,
            gsn,
            &gv,
            predicted,
            model.walkback.k,
            false,
            &mut rng,
        )?;
        let out = g.value(*recons.last().expect("chain has steps")).clone();
        self.past.push(hiddens);
        if self.past.len() > keep {
            self.past.remove(0);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bce_loss, OptimizerConfig};
    use crate::tensor::{Activation, NoiseConfig};

    fn model(seed: u64, visible: usize) -> TgsnModel {
        let mut rng = RandomSource::new(seed);
        let gsn = GsnParams::new(
            &[visible, 16, 12],
            true,
            NoiseConfig::input_only(0.1),
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        TgsnModel::new(gsn, 2, WalkbackConfig::fixed(2)).unwrap()
    }

    fn opts() -> (OptimizerState, OptimizerState) {
        (
            OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap(),
            OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap(),
        )
    }

    fn frame(bits: &[u8]) -> Matrix {
        Matrix::row_vector(bits.iter().map(|&b| b as f64).collect())
    }

    #[test]
    fn gate_contracts() {
        assert!(!tgsn_warmup_gate(&[1.0], 0.01));
        assert!(tgsn_warmup_gate(&[1.0, 1.0], 0.01));
        let steep: Vec<f64> = (0..6).map(|i| 0.5f64.powi(i)).collect();
        assert!(!tgsn_warmup_gate(&steep, 0.01));
        // 5% improvements through epoch 6, then 0.5% at epoch 7.
        let mut curve = vec![1.0];
        for _ in 0..5 {
            curve.push(curve.last().unwrap() * 0.95);
        }
        curve.push(curve.last().unwrap() * 0.995);
        let opens = (1..=curve.len()).find(|&e| tgsn_warmup_gate(&curve[..e], 0.01));
        assert_eq!(opens, Some(7));
    }

    #[test]
    fn too_short_sequence_rejected() {
        let mut m = model(1, 8);
        let (mut a, mut b) = opts();
        let err = tgsn_em_epoch(
            &mut m,
            &[vec![frame(&[0; 8])]],
            true,
            &mut a,
            &mut b,
            None,
            &mut RandomSource::new(1),
        );
        assert!(matches!(err, Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn passes_freeze_the_other_group() {
        let mut m = model(2, 8);
        let data = vec![vec![
            frame(&[1, 0, 1, 0, 1, 0, 1, 0]),
            frame(&[0, 1, 0, 1, 0, 1, 0, 1]),
            frame(&[1, 1, 0, 0, 1, 1, 0, 0]),
        ]];
        let (mut a, mut b) = opts();
        let mut rng = RandomSource::new(3);
        // Run the two passes separately by hand to observe each one.
        let before_t = m.transition.clone();
        for t in 0..data[0].len() {
            let s = step(
                &m,
                &[],
                &data[0][t],
                data[0].get(t + 1),
                TgsnPhase::Gsn,
                true,
                true,
                &mut rng,
            )
            .unwrap();
            a.apply(&mut m.gsn.params_mut(), &s.grads.unwrap()).unwrap();
        }
        assert_eq!(m.transition, before_t);
        let before_g = m.gsn.clone();
        for t in 0..data[0].len() {
            let s = step(
                &m,
                &[],
                &data[0][t],
                data[0].get(t + 1),
                TgsnPhase::Transition,
                true,
                true,
                &mut rng,
            )
            .unwrap();
            if let Some(gr) = s.grads {
                b.apply(&mut m.transition.params_mut(), &gr).unwrap();
            }
        }
        assert_eq!(m.gsn, before_g);
        assert_ne!(m.transition, before_t);
    }

    fn predicted_bce(m: &TgsnModel, seq: &[Matrix]) -> (f64, f64) {
        let mut p = TgsnPredictor::new(m);
        let (mut pred, mut recon) = (0.0, 0.0);
        for t in 0..seq.len() - 1 {
            let y = p.observe(&seq[t]).unwrap();
            pred += bce_loss(&y, &seq[t + 1]).unwrap().0;
            let (r, _) = crate::gsn::gsn_reconstruct_clean(&m.gsn, &seq[t], m.walkback.k).unwrap();
            recon += bce_loss(&r, &seq[t]).unwrap().0;
        }
        (pred, recon)
    }

    #[test]
    fn constant_sequence_prediction_matches_reconstruction() {
        let mut m = model(4, 8);
        let x = frame(&[1, 1, 0, 0, 1, 0, 1, 0]);
        let data = vec![vec![x.clone(); 6]];
        let (mut a, mut b) = opts();
        let mut rng = RandomSource::new(5);
        for _ in 0..150 {
            tgsn_em_epoch(&mut m, &data, true, &mut a, &mut b, None, &mut rng).unwrap();
        }
        let (pred, recon) = predicted_bce(&m, &data[0]);
        assert!(
            (pred - recon).abs() <= 0.1 * recon.max(pred),
            "pred {pred} recon {recon}"
        );
    }

    #[test]
    fn alternation_predicts_the_other_symbol() {
        let mut m = model(6, 8);
        let a_frame = frame(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let b_frame = frame(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let seq: Vec<Matrix> = (0..8)
            .map(|i| {
                if i % 2 == 0 {
                    a_frame.clone()
                } else {
                    b_frame.clone()
                }
            })
            .collect();
        let (mut a, mut b) = opts();
        let mut rng = RandomSource::new(7);
        for _ in 0..150 {
            tgsn_em_epoch(
                &mut m,
                std::slice::from_ref(&seq),
                true,
                &mut a,
                &mut b,
                None,
                &mut rng,
            )
            .unwrap();
        }
        let mut p = TgsnPredictor::new(&m);
        p.observe(&b_frame).unwrap();
        let after_a = p.observe(&a_frame).unwrap();
        let to_b = bce_loss(&after_a, &b_frame).unwrap().0;
        let to_a = bce_loss(&after_a, &a_frame).unwrap().0;
        assert!(to_b < to_a, "to_b {to_b} to_a {to_a}");
    }
}
