use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamGrads, Var};
use crate::gsn::{run_chain, GsnParams};
use crate::nn::{clip_global_norm, GradClipConfig, OptimizerState};
use crate::tensor::{activate, gaussian, Matrix, RandomSource};

/// Untied GSN run as a recurrent net: the hidden stack persists across
/// frames and every frame launches a `k`-step free chain whose visibles
/// predict the next `k` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct UntiedGsnModel {
    pub gsn: GsnParams,
    pub k: usize,
    /// Extra `(x′, x)` pairs per frame from sequential walkbacks; 0 disables.
    pub sequential_walkbacks: usize,
}

impl UntiedGsnModel {
    pub fn new(gsn: GsnParams, k: usize, sequential_walkbacks: usize) -> Result<Self> {
        if gsn.tied() {
            return Err(Error::InvalidArgument(
                "untied sequence model needs untied weights".into(),
            ));
        }
        let min = 2 * gsn.hidden_layers();
        if k < min {
            return Err(Error::InvalidArgument(format!(
                "prediction depth k = {k} must be at least twice the hidden layer count ({min})"
            )));
        }
        Ok(UntiedGsnModel {
            gsn,
            k,
            sequential_walkbacks,
        })
    }
}

/// A stored prediction: the chain graph that produced it and its output node.
#[derive(Clone, Debug)]
pub struct Prediction {
    graph: Rc<RefCell<Graph<'static>>>,
    output: Var,
    origin: usize,
}

impl Prediction {
    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn value(&self) -> Matrix {
        self.graph.borrow().value(self.output).clone()
    }
}

/// Pending predictions grouped by the timestep they target. Slots cover the
/// next `k` timesteps; each slot may hold predictions from several origins.
#[derive(Clone, Debug)]
pub struct PredictionBuffer {
    k: usize,
    next: usize,
    slots: VecDeque<Vec<Prediction>>,
}

impl PredictionBuffer {
    pub fn new(k: usize) -> Self {
        PredictionBuffer {
            k,
            next: 0,
            slots: VecDeque::new(),
        }
    }

    /// Timestep the next [`PredictionBuffer::take`] must ask for.
    pub fn next_timestep(&self) -> usize {
        self.next
    }

    pub fn len(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Origins of the predictions targeting timestep `t`.
    pub fn origins(&self, t: usize) -> Vec<usize> {
        t.checked_sub(self.next)
            .and_then(|i| self.slots.get(i))
            .map(|s| s.iter().map(|p| p.origin).collect())
            .unwrap_or_default()
    }

    /// Removes and returns every prediction targeting `t`.
    pub fn take(&mut self, t: usize) -> Result<Vec<Prediction>> {
        if t != self.next {
            return Err(Error::BufferTimestep {
                expected: self.next,
                found: t,
            });
        }
        self.next += 1;
        Ok(self.slots.pop_front().unwrap_or_default())
    }

    /// Stores one chain's predictions for `origin + 1 ..= origin + len`.
    fn store(&mut self, origin: usize, graph: Graph<'static>, outputs: &[Var]) -> Result<()> {
        if origin + 1 != self.next {
            return Err(Error::BufferTimestep {
                expected: self.next.saturating_sub(1),
                found: origin,
            });
        }
        if outputs.len() > self.k {
            return Err(Error::InvalidArgument(format!(
                "{} predictions exceed buffer depth {}",
                outputs.len(),
                self.k
            )));
        }
        let graph = Rc::new(RefCell::new(graph));
        while self.slots.len() < outputs.len() {
            self.slots.push_back(Vec::new());
        }
        for (slot, &output) in self.slots.iter_mut().zip(outputs) {
            slot.push(Prediction {
                graph: Rc::clone(&graph),
                output,
                origin,
            });
        }
        Ok(())
    }
}

/// Recurrent state of an untied GSN over one batch of streams.
#[derive(Clone, Debug)]
pub struct UntiedState {
    pub hiddens: Vec<Matrix>,
    pub buffer: PredictionBuffer,
}

impl UntiedState {
    pub fn new(model: &UntiedGsnModel, batch: usize) -> Self {
        UntiedState {
            hiddens: model
                .gsn
                .hidden_widths()
                .iter()
                .map(|&n| Matrix::zeros(batch, n))
                .collect(),
            buffer: PredictionBuffer::new(model.k),
        }
    }

    pub fn timestep(&self) -> usize {
        self.buffer.next_timestep()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UntiedStepOutput {
    /// Mean loss of the buffered predictions for this frame, if any.
    pub loss: Option<f64>,
    /// Number of buffered predictions trained on.
    pub pairs: usize,
}

/// `(x′, x)` pairs from walking backwards: encode with the transposed
/// downward weights after subtracting the visible bias, perturb the hiddens
/// with the hidden Gaussian noise, decode forwards. Each step starts from the
/// previous `x′`.
pub fn sequential_walkback_pairs(
    gsn: &GsnParams,
    x: &Matrix,
    k: usize,
    rng: &mut RandomSource,
) -> Result<Vec<(Matrix, Matrix)>> {
    if x.cols() != gsn.visible_width() {
        return Err(Error::shape(
            "sequential_walkback_pairs",
            x.shape(),
            (x.rows(), gsn.visible_width()),
        ));
    }
    let mut pairs = Vec::with_capacity(k);
    let mut cur = x.clone();
    let noise = gsn.noise;
    for _ in 0..k {
        let centred = cur.sub(&Matrix::zeros(cur.rows(), cur.cols()).add_row(&gsn.biases[0])?)?;
        let pre = match &gsn.down {
            Some(d) => centred.matmul_nt(&d[0])?,
            None => centred.matmul(&gsn.up[0])?,
        };
        let mut h = activate(&pre, gsn.hidden_activation);
        if noise.hidden_noise_active() {
            h = h.add(&gaussian(
                h.rows(),
                h.cols(),
                noise.gauss_mean,
                noise.gauss_sigma,
                rng,
            )?)?;
        }
        let down = match &gsn.down {
            Some(d) => h.matmul(&d[0])?,
            None => h.matmul_nt(&gsn.up[0])?,
        };
        let next = activate(&down.add_row(&gsn.biases[0])?, gsn.visible_activation);
        pairs.push((next.clone(), x.clone()));
        cur = next;
    }
    Ok(pairs)
}

/// Loss of one chain's predictions against `targets` (one per step), with
/// gradients. The chain starts from `x` and the given hiddens, exactly as in
/// training.
pub fn untied_chain_loss_and_grads(
    model: &UntiedGsnModel,
    x: &Matrix,
    hiddens: &[Matrix],
    targets: &[Matrix],
    rng: &mut RandomSource,
) -> Result<(f64, Vec<Matrix>)> {
    let gsn = &model.gsn;
    let mut g = Graph::new();
    let gv = gsn.bind(&mut g, Some(0));
    let xv = g.constant_ref(x);
    let hv = hiddens.iter().map(|h| g.constant_ref(h)).collect();
    let chain = run_chain(&mut g, gsn, &gv, xv, hv, targets.len(), false, true, rng)?;
    let kind = gsn.loss_kind();
    let mut terms = Vec::with_capacity(targets.len());
    for (&r, t) in chain.recons.iter().zip(targets) {
        let tv = g.constant_ref(t);
        terms.push(g.loss(kind, r, tv)?);
    }
    let loss = g.mean(&terms)?;
    Ok((
        g.scalar(loss),
        g.backward(loss)?.into_dense(&gsn.param_shapes()),
    ))
}

/// One online step at frame `x_t`: train on every buffered prediction of
/// `x_t` (mean loss, one optimizer update), then launch a `k`-step chain from
/// `x_t` and the persistent hiddens and buffer its visibles as predictions of
/// the next `k` frames.
pub fn untied_gsn_online_step(
    model: &mut UntiedGsnModel,
    x: &Matrix,
    state: &mut UntiedState,
    opt: &mut OptimizerState,
    clip: Option<GradClipConfig>,
    rng: &mut RandomSource,
) -> Result<UntiedStepOutput> {
    let gsn_width = model.gsn.visible_width();
    if x.cols() != gsn_width || state.hiddens.first().is_some_and(|h| h.rows() != x.rows()) {
        return Err(Error::shape(
            "untied_gsn_online_step",
            x.shape(),
            (state.hiddens[0].rows(), gsn_width),
        ));
    }
    let t = state.timestep();
    let pending = state.buffer.take(t)?;
    let kind = model.gsn.loss_kind();
    let shapes = model.gsn.param_shapes();

    let mut terms: Vec<(f64, ParamGrads)> = Vec::new();
    for p in &pending {
        let mut g = p.graph.borrow_mut();
        let target = g.constant(x.clone());
        let l = g.loss(kind, p.output, target)?;
        terms.push((g.scalar(l), g.backward(l)?));
    }
    let pairs = terms.len();
    if pairs > 0 && model.sequential_walkbacks > 0 {
        for (xp, target) in
            sequential_walkback_pairs(&model.gsn, x, model.sequential_walkbacks, rng)?
        {
            let gsn = &model.gsn;
            let mut g = Graph::new();
            let gv = gsn.bind(&mut g, Some(0));
            let xv = g.constant(xp);
            let h0 = crate::gsn::zero_hiddens(&mut g, gsn, x.rows());
            let chain = run_chain(&mut g, gsn, &gv, xv, h0, 1, true, false, rng)?;
            let tv = g.constant(target);
            let l = g.loss(kind, chain.recons[0], tv)?;
            terms.push((g.scalar(l), g.backward(l)?));
        }
    }
    let loss = if terms.is_empty() {
        None
    } else {
        let n = terms.len() as f64;
        let mut total = ParamGrads::default();
        let mut pred_loss = 0.0;
        for (i, (l, gr)) in terms.into_iter().enumerate() {
            if i < pairs {
                pred_loss += l;
            }
            total.merge_scaled(gr, 1.0 / n);
        }
        let mut grads = total.into_dense(&shapes);
        if let Some(c) = clip {
            clip_global_norm(&mut grads, c);
        }
        opt.apply(&mut model.gsn.params_mut(), &grads)?;
        (pairs > 0).then(|| pred_loss / pairs as f64)
    };
    drop(pending);

    let gsn = &model.gsn;
    let mut g: Graph<'static> = Graph::new();
    let gv = gsn.bind_owned(&mut g, Some(0));
    let xv = g.constant(x.clone());
    let hv = state
        .hiddens
        .iter()
        .map(|h| g.constant(h.clone()))
        .collect();
    let first = run_chain(&mut g, gsn, &gv, xv, hv, 1, false, true, rng)?;
    state.hiddens = first.hiddens.iter().map(|&h| g.value(h).clone()).collect();
    let r1 = first.recons[0];
    let rest = run_chain(
        &mut g,
        gsn,
        &gv,
        r1,
        first.hiddens,
        model.k - 1,
        false,
        true,
        rng,
    )?;
    let mut outputs = vec![r1];
    outputs.extend(rest.recons);
    state.buffer.store(t, g, &outputs)?;
    Ok(UntiedStepOutput { loss, pairs })
}

/// Noise-free teacher-forced predictor with up to `k` steps of lookahead.
#[derive(Clone, Debug)]
pub struct UntiedPredictor<'m> {
    model: &'m UntiedGsnModel,
    hiddens: Option<Vec<Matrix>>,
}

impl<'m> UntiedPredictor<'m> {
    pub fn new(model: &'m UntiedGsnModel) -> Self {
        UntiedPredictor {
            model,
            hiddens: None,
        }
    }

    pub fn reset(&mut self) {
        self.hiddens = None;
    }

    pub fn depth(&self) -> usize {
        self.model.k
    }

    /// Consumes `x_t`; returns predictions of `x_{t+1} … x_{t+depth}`.
    pub fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>> {
        if depth == 0 || depth > self.model.k {
            return Err(Error::Horizon {
                horizon: depth,
                depth: self.model.k,
            });
        }
        let gsn = &self.model.gsn;
        let mut rng = RandomSource::new(0);
        let prev = match self.hiddens.take() {
            Some(h) if h[0].rows() == x.rows() => h,
            _ => gsn
                .hidden_widths()
                .iter()
                .map(|&n| Matrix::zeros(x.rows(), n))
                .collect(),
        };
        let mut g = Graph::new();
        let gv = gsn.bind(&mut g, None);
        let xv = g.constant_ref(x);
        let hv = prev.iter().map(|h| g.constant_ref(h)).collect();
        let first = run_chain(&mut g, gsn, &gv, xv, hv, 1, false, false, &mut rng)?;
        let r1 = first.recons[0];
        let hiddens: Vec<Matrix> = first.hiddens.iter().map(|&h| g.value(h).clone()).collect();
        let rest = run_chain(
            &mut g,
            gsn,
            &gv,
            r1,
            first.hiddens,
            depth - 1,
            false,
            false,
            &mut rng,
        )?;
        let mut out = vec![g.value(r1).clone()];
        out.extend(rest.recons.iter().map(|&r| g.value(r).clone()));
        drop(g);
        self.hiddens = Some(hiddens);
        Ok(out)
    }

    pub fn observe(&mut self, x: &Matrix) -> Result<Matrix> {
        Ok(self.observe_horizons(x, 1)?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, OptimizerConfig};
    use crate::tensor::{Activation, NoiseConfig};

    fn model(seed: u64, k: usize) -> UntiedGsnModel {
        let mut rng = RandomSource::new(seed);
        let gsn = GsnParams::new(
            &[8, 10, 6],
            false,
            NoiseConfig::input_only(0.1).with_hidden_gaussian(0.0, 0.2),
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        UntiedGsnModel::new(gsn, k, 0).unwrap()
    }

    fn frame(bits: &[u8]) -> Matrix {
        Matrix::row_vector(bits.iter().map(|&b| b as f64).collect())
    }

    #[test]
    fn k_must_cover_twice_the_layers() {
        let m = model(1, 4);
        assert!(UntiedGsnModel::new(m.gsn.clone(), 3, 0).is_err());
        let mut tied = m.gsn.clone();
        tied.down = None;
        assert!(UntiedGsnModel::new(tied, 4, 0).is_err());
    }

    #[test]
    fn buffer_bookkeeping() {
        let mut m = model(2, 4);
        let mut st = UntiedState::new(&m, 1);
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut rng = RandomSource::new(3);
        let x = frame(&[1, 0, 1, 0, 1, 0, 1, 0]);
        let out = untied_gsn_online_step(&mut m, &x, &mut st, &mut opt, None, &mut rng).unwrap();
        assert_eq!(out.pairs, 0);
        assert_eq!(out.loss, None);
        assert_eq!(st.buffer.len(), 4);
        let out = untied_gsn_online_step(&mut m, &x, &mut st, &mut opt, None, &mut rng).unwrap();
        assert_eq!(out.pairs, 1);
        assert!(out.loss.is_some());
        assert_eq!(st.buffer.len(), 3 + 4);
        assert_eq!(st.buffer.origins(2), [0, 1]);
        assert_eq!(st.buffer.origins(5), [1]);
        assert!(matches!(
            st.buffer.take(7),
            Err(Error::BufferTimestep {
                expected: 2,
                found: 7
            })
        ));
    }

    #[test]
    fn chain_gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = model(10 + seed, 4);
            let mut rng = RandomSource::new(seed);
            let x =
                Matrix::from_vec(2, 8, (0..16).map(|_| rng.uniform().round()).collect()).unwrap();
            let hid = vec![
                gaussian(2, 10, 0.0, 0.5, &mut rng).unwrap(),
                gaussian(2, 6, 0.0, 0.5, &mut rng).unwrap(),
            ];
            let targets: Vec<Matrix> = (0..4)
                .map(|_| {
                    Matrix::from_vec(2, 8, (0..16).map(|_| rng.uniform().round()).collect())
                        .unwrap()
                })
                .collect();
            let params: Vec<Matrix> = m.gsn.params().into_iter().cloned().collect();
            let err = gradcheck(
                |ps| {
                    let mut q = m.clone();
                    q.gsn.set_params(ps)?;
                    untied_chain_loss_and_grads(&q, &x, &hid, &targets, &mut RandomSource::new(99))
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn sequential_walkback_contracts() {
        let m = model(3, 4);
        let x = frame(&[1, 0, 1, 0, 1, 0, 1, 0]);
        assert!(
            sequential_walkback_pairs(&m.gsn, &x, 0, &mut RandomSource::new(1))
                .unwrap()
                .is_empty()
        );
        let pairs = sequential_walkback_pairs(&m.gsn, &x, 3, &mut RandomSource::new(1)).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|(_, t)| t == &x));
    }

    #[test]
    fn orthonormal_linear_round_trip() {
        let mut gsn = GsnParams::zeros(
            &[3, 3],
            false,
            NoiseConfig::off(),
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap();
        let (c, s) = (0.6f64, 0.8f64);
        // rotation about z composed with a reflection
        let q =
            Matrix::from_rows(&[vec![c, -s, 0.0], vec![s, c, 0.0], vec![0.0, 0.0, -1.0]]).unwrap();
        gsn.down = Some(vec![q]);
        gsn.up[0] = Matrix::identity(3);
        gsn.biases[0] = Matrix::row_vector(vec![0.3, -0.2, 0.1]);
        let x = Matrix::from_rows(&[vec![0.1, 0.7, 0.4], vec![0.9, 0.2, 0.5]]).unwrap();
        for (xp, target) in
            sequential_walkback_pairs(&gsn, &x, 4, &mut RandomSource::new(0)).unwrap()
        {
            assert!(xp.sub(&target).unwrap().max_abs() < 1e-6);
        }
    }

    #[test]
    fn constant_stream_loss_decreases() {
        let mut m = model(5, 4);
        let mut st = UntiedState::new(&m, 1);
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.005)).unwrap();
        let mut rng = RandomSource::new(6);
        let x = frame(&[1, 1, 0, 1, 0, 0, 1, 0]);
        let mut losses = Vec::new();
        for _ in 0..201 {
            if let Some(l) = untied_gsn_online_step(&mut m, &x, &mut st, &mut opt, None, &mut rng)
                .unwrap()
                .loss
            {
                losses.push(l);
            }
        }
        let blocks: Vec<f64> = losses
            .chunks(20)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        for w in blocks.windows(2) {
            assert!(w[1] <= w[0], "{blocks:?}");
        }
    }

    #[test]
    fn predictor_horizon_limits() {
        let m = model(7, 4);
        let mut p = UntiedPredictor::new(&m);
        let x = frame(&[1, 1, 0, 1, 0, 0, 1, 0]);
        assert_eq!(p.observe_horizons(&x, 4).unwrap().len(), 4);
        assert!(matches!(
            p.observe_horizons(&x, 5),
            Err(Error::Horizon { .. })
        ));
    }
}
