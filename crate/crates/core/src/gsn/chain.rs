use std::rc::Rc;

use super::{GsnParams, GsnState, GsnVars, WalkbackConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::OptimizerState;
use crate::tensor::{gaussian, Matrix, RandomSource, SaltPepperMask};

/// Result of one alternating sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct GsnSweep {
    pub state: GsnState,
    /// Decoded visible mean. Equals `state.visible()` unless the visible was
    /// clamped.
    pub reconstruction: Matrix,
}

pub(crate) fn zero_hiddens(g: &mut Graph<'_>, params: &GsnParams, batch: usize) -> Vec<Var> {
    params
        .hidden_widths()
        .iter()
        .map(|&n| g.constant(Matrix::zeros(batch, n)))
        .collect()
}

/// Salt-and-pepper corruption of a visible node (skipped when `noisy` is off
/// or `p` is zero).
pub(crate) fn corrupt(
    g: &mut Graph<'_>,
    params: &GsnParams,
    x: Var,
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<Var> {
    let p = params.noise.salt_pepper_p;
    if !noisy || p == 0.0 {
        return Ok(x);
    }
    let (r, c) = g.value(x).shape();
    let mask = SaltPepperMask::sample(r, c, p, rng)?;
    g.salt_pepper(x, Rc::new(mask))
}

fn down_mul(g: &mut Graph<'_>, vars: &GsnVars, h: Var, i: usize) -> Result<Var> {
    match &vars.down {
        Some(d) => g.matmul(h, d[i]),
        None => g.matmul_nt(h, vars.up[i]),
    }
}

fn add_noise(g: &mut Graph<'_>, params: &GsnParams, x: Var, rng: &mut RandomSource) -> Result<Var> {
    let (r, c) = g.value(x).shape();
    let n = gaussian(r, c, params.noise.gauss_mean, params.noise.gauss_sigma, rng)?;
    let n = g.constant(n);
    g.add(x, n)
}

/// Hidden layer `j` from its neighbours in `layers` (index 0 is the visible).
fn hidden_update(
    g: &mut Graph<'_>,
    params: &GsnParams,
    vars: &GsnVars,
    layers: &[Var],
    j: usize,
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<Var> {
    let mut pre = g.matmul(layers[j - 1], vars.up[j - 1])?;
    if j < params.hidden_layers() {
        let top = down_mul(g, vars, layers[j + 1], j)?;
        pre = g.add(pre, top)?;
    }
    pre = g.add_row(pre, vars.biases[j])?;
    if noisy && params.noise.apply_pre_activation {
        pre = add_noise(g, params, pre, rng)?;
    }
    let mut h = g.act(pre, params.hidden_activation);
    if noisy && params.noise.apply_post_activation {
        h = add_noise(g, params, h, rng)?;
    }
    Ok(h)
}

/// Visible mean from the first hidden layer.
pub(crate) fn decode(
    g: &mut Graph<'_>,
    params: &GsnParams,
    vars: &GsnVars,
    h1: Var,
) -> Result<Var> {
    let pre = down_mul(g, vars, h1, 0)?;
    let pre = g.add_row(pre, vars.biases[0])?;
    Ok(g.act(pre, params.visible_activation))
}

/// One sweep: odd hidden layers, then even ones. `layers[0]` is the visible
/// input the sweep reads; it is left in place and the decoded visible is
/// returned.
pub(crate) fn sweep(
    g: &mut Graph<'_>,
    params: &GsnParams,
    vars: &GsnVars,
    layers: &mut [Var],
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<Var> {
    let top = params.hidden_layers();
    for j in (1..=top).step_by(2) {
        layers[j] = hidden_update(g, params, vars, layers, j, noisy, rng)?;
    }
    let recon = decode(g, params, vars, layers[1])?;
    for j in (2..=top).step_by(2) {
        layers[j] = hidden_update(g, params, vars, layers, j, noisy, rng)?;
    }
    Ok(recon)
}

pub(crate) struct ChainOutput {
    pub recons: Vec<Var>,
    pub hiddens: Vec<Var>,
}

/// Runs `steps` sweeps starting from visible `x` and the given hiddens.
///
/// Clamped chains feed a fresh corruption of `x` into every sweep; free
/// chains feed the corrupted previous reconstruction.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_chain(
    g: &mut Graph<'_>,
    params: &GsnParams,
    vars: &GsnVars,
    x: Var,
    hiddens: Vec<Var>,
    steps: usize,
    clamp: bool,
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<ChainOutput> {
    let mut layers = Vec::with_capacity(hiddens.len() + 1);
    layers.push(x);
    layers.extend(hiddens);
    let mut recons = Vec::with_capacity(steps);
    let mut visible = x;
    for _ in 0..steps {
        layers[0] = corrupt(g, params, visible, noisy, rng)?;
        let recon = sweep(g, params, vars, &mut layers, noisy, rng)?;
        recons.push(recon);
        if !clamp {
            visible = recon;
        }
    }
    Ok(ChainOutput {
        recons,
        hiddens: layers[1..].to_vec(),
    })
}

fn check_visible(params: &GsnParams, x: &Matrix) -> Result<()> {
    if x.cols() != params.visible_width() {
        return Err(Error::shape(
            "gsn",
            x.shape(),
            (x.rows(), params.visible_width()),
        ));
    }
    Ok(())
}

/// One noisy sweep of the chain. With `clamp_visible` the sweep reads the
/// clamp (taken as already corrupted) and the returned state keeps it;
/// otherwise the current visible is corrupted, read, and replaced by the
/// reconstruction.
pub fn gsn_update_step(
    params: &GsnParams,
    state: &GsnState,
    rng: &mut RandomSource,
    clamp_visible: Option<&Matrix>,
) -> Result<GsnSweep> {
    state.check(params)?;
    if let Some(c) = clamp_visible {
        if c.shape() != state.layers[0].shape() {
            return Err(Error::shape(
                "gsn_update_step clamp",
                c.shape(),
                state.layers[0].shape(),
            ));
        }
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g, None);
    let mut layers: Vec<Var> = state.layers.iter().map(|m| g.constant_ref(m)).collect();
    layers[0] = match clamp_visible {
        Some(c) => g.constant_ref(c),
        None => corrupt(&mut g, params, layers[0], true, rng)?,
    };
    let recon = sweep(&mut g, params, &vars, &mut layers, true, rng)?;
    let reconstruction = g.value(recon).clone();
    let mut out: Vec<Matrix> = layers.iter().map(|&v| g.value(v).clone()).collect();
    out[0] = match clamp_visible {
        Some(c) => c.clone(),
        None => reconstruction.clone(),
    };
    Ok(GsnSweep {
        state: GsnState { layers: out },
        reconstruction,
    })
}

/// Walkback training pairs `(x, reconstruction_i)` from the clamped chain.
pub fn walkback_pairs(
    params: &GsnParams,
    x: &Matrix,
    wb: &WalkbackConfig,
    rng: &mut RandomSource,
) -> Result<Vec<(Matrix, Matrix)>> {
    check_visible(params, x)?;
    let steps = wb.draw_steps(rng);
    let mut g = Graph::new();
    let vars = params.bind(&mut g, None);
    let xv = g.constant_ref(x);
    let hiddens = zero_hiddens(&mut g, params, x.rows());
    let out = run_chain(&mut g, params, &vars, xv, hiddens, steps, true, true, rng)?;
    Ok(out
        .recons
        .iter()
        .map(|&r| (x.clone(), g.value(r).clone()))
        .collect())
}

/// Free-running noisy chain from `x0`; returns one visible per step.
pub fn gsn_sample_chain(
    params: &GsnParams,
    x0: &Matrix,
    steps: usize,
    rng: &mut RandomSource,
) -> Result<Vec<Matrix>> {
    check_visible(params, x0)?;
    let mut state = GsnState::start(params, x0)?;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let s = gsn_update_step(params, &state, rng, None)?;
        out.push(s.reconstruction);
        state = s.state;
    }
    Ok(out)
}

fn reconstruct(
    params: &GsnParams,
    x: &Matrix,
    steps: usize,
    noisy: bool,
    rng: &mut RandomSource,
) -> Result<(Matrix, GsnState)> {
    check_visible(params, x)?;
    let mut g = Graph::new();
    let vars = params.bind(&mut g, None);
    let xv = g.constant_ref(x);
    let hiddens = zero_hiddens(&mut g, params, x.rows());
    let out = run_chain(&mut g, params, &vars, xv, hiddens, steps, true, noisy, rng)?;
    let recon = g
        .value(*out.recons.last().expect("at least one step"))
        .clone();
    let mut layers = vec![recon.clone()];
    layers.extend(out.hiddens.iter().map(|&h| g.value(h).clone()));
    Ok((recon, GsnState { layers }))
}

/// Final reconstruction and hidden stack of the noisy clamped chain.
pub fn gsn_reconstruct(
    params: &GsnParams,
    x: &Matrix,
    wb: &WalkbackConfig,
    rng: &mut RandomSource,
) -> Result<(Matrix, GsnState)> {
    let steps = wb.draw_steps(rng);
    reconstruct(params, x, steps, true, rng)
}

/// As [`gsn_reconstruct`] with every noise source disabled.
pub fn gsn_reconstruct_clean(
    params: &GsnParams,
    x: &Matrix,
    steps: usize,
) -> Result<(Matrix, GsnState)> {
    reconstruct(params, x, steps.max(1), false, &mut RandomSource::new(0))
}

/// Walkback loss (mean over pairs) and gradients in [`GsnParams::params`]
/// order.
pub fn gsn_loss_and_grads(
    params: &GsnParams,
    x: &Matrix,
    wb: &WalkbackConfig,
    rng: &mut RandomSource,
) -> Result<(f64, Vec<Matrix>)> {
    check_visible(params, x)?;
    let steps = wb.draw_steps(rng);
    let mut g = Graph::new();
    let vars = params.bind(&mut g, Some(0));
    let xv = g.constant_ref(x);
    let hiddens = zero_hiddens(&mut g, params, x.rows());
    let out = run_chain(&mut g, params, &vars, xv, hiddens, steps, true, true, rng)?;
    let kind = params.loss_kind();
    let terms = out
        .recons
        .iter()
        .map(|&r| g.loss(kind, r, xv))
        .collect::<Result<Vec<_>>>()?;
    let loss = g.mean(&terms)?;
    let grads = g.backward(loss)?;
    Ok((g.scalar(loss), grads.into_dense(&params.param_shapes())))
}

/// One optimizer step on the walkback loss; returns the loss before the step.
pub fn gsn_train_step(
    params: &mut GsnParams,
    x: &Matrix,
    wb: &WalkbackConfig,
    opt: &mut OptimizerState,
    rng: &mut RandomSource,
) -> Result<f64> {
    let (loss, grads) = gsn_loss_and_grads(params, x, wb, rng)?;
    opt.apply(&mut params.params_mut(), &grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bce_loss, gradcheck_report, OptimizerConfig};
    use crate::tensor::{Activation, NoiseConfig};

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_params_give_zero_hiddens_and_half_visible() {
        let p = GsnParams::zeros(
            &[4, 3, 2],
            true,
            NoiseConfig::off(),
            Activation::Tanh,
            Activation::Sigmoid,
        )
        .unwrap();
        let x = Matrix::filled(2, 4, 1.0);
        let s = gsn_update_step(
            &p,
            &GsnState::start(&p, &x).unwrap(),
            &mut RandomSource::new(0),
            None,
        )
        .unwrap();
        assert!(s.state.hiddens().iter().all(|h| h.max_abs() == 0.0));
        assert!(s.state.visible().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_computed_sweep() {
        // visible 2, one hidden layer of width 2, tied
        let mut p = GsnParams::zeros(
            &[2, 2],
            true,
            NoiseConfig::off(),
            Activation::Tanh,
            Activation::Sigmoid,
        )
        .unwrap();
        p.up[0] = Matrix::from_rows(&[vec![0.5, -1.0], vec![0.25, 2.0]]).unwrap();
        p.biases[0] = Matrix::row_vector(vec![0.1, -0.2]);
        p.biases[1] = Matrix::row_vector(vec![0.3, 0.0]);
        let x = Matrix::row_vector(vec![1.0, 0.0]);
        let s = gsn_update_step(
            &p,
            &GsnState::start(&p, &x).unwrap(),
            &mut RandomSource::new(0),
            None,
        )
        .unwrap();
        let h = [(1.0f64 * 0.5 + 0.3).tanh(), (1.0f64 * -1.0).tanh()];
        let v = [
            sigmoid(h[0] * 0.5 + h[1] * -1.0 + 0.1),
            sigmoid(h[0] * 0.25 + h[1] * 2.0 - 0.2),
        ];
        assert!((s.state.hiddens()[0].get(0, 0) - h[0]).abs() < 1e-15);
        assert!((s.state.hiddens()[0].get(0, 1) - h[1]).abs() < 1e-15);
        assert!((s.reconstruction.get(0, 0) - v[0]).abs() < 1e-15);
        assert!((s.reconstruction.get(0, 1) - v[1]).abs() < 1e-15);
    }

    #[test]
    fn clamp_is_kept() {
        let mut rng = RandomSource::new(3);
        let p = GsnParams::new(
            &[5, 4, 3],
            true,
            NoiseConfig::input_only(0.3).with_hidden_gaussian(0.0, 1.0),
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        let x = Matrix::filled(2, 5, 0.2);
        let clamp = Matrix::filled(2, 5, 0.9);
        let s = gsn_update_step(
            &p,
            &GsnState::start(&p, &x).unwrap(),
            &mut rng,
            Some(&clamp),
        )
        .unwrap();
        assert_eq!(s.state.visible(), &clamp);
    }

    fn toy(seed: u64, noise: NoiseConfig, layers: &[usize], tied: bool) -> (GsnParams, Matrix) {
        let mut rng = RandomSource::new(seed);
        let p = GsnParams::new(
            layers,
            tied,
            noise,
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_vec(
            3,
            layers[0],
            (0..3 * layers[0])
                .map(|_| (rng.uniform() < 0.5) as u8 as f64)
                .collect(),
        )
        .unwrap();
        (p, x)
    }

    #[test]
    fn walkback_pair_counts() {
        let (p, x) = toy(1, NoiseConfig::input_only(0.4), &[6, 5, 4], true);
        let mut rng = RandomSource::new(9);
        let pairs = walkback_pairs(&p, &x, &WalkbackConfig::fixed(4), &mut rng).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|(t, _)| t == &x));
        let pairs = walkback_pairs(&p, &x, &WalkbackConfig::geometric(0.0), &mut rng).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn sample_chain_contracts() {
        let (p, x) = toy(
            2,
            NoiseConfig::input_only(0.4).with_hidden_gaussian(0.0, 2.0),
            &[6, 5, 4, 3],
            true,
        );
        assert!(gsn_sample_chain(&p, &x, 0, &mut RandomSource::new(1))
            .unwrap()
            .is_empty());
        let a = gsn_sample_chain(&p, &x, 12, &mut RandomSource::new(1)).unwrap();
        let b = gsn_sample_chain(&p, &x, 12, &mut RandomSource::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a
            .iter()
            .all(|m| m.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn reconstruct_shapes_and_determinism() {
        let (p, x) = toy(3, NoiseConfig::input_only(0.2), &[6, 5, 4, 3], false);
        let wb = WalkbackConfig::fixed(3);
        let (r1, s1) = gsn_reconstruct(&p, &x, &wb, &mut RandomSource::new(5)).unwrap();
        let (r2, s2) = gsn_reconstruct(&p, &x, &wb, &mut RandomSource::new(5)).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
        let widths: Vec<usize> = s1.hiddens().iter().map(Matrix::cols).collect();
        assert_eq!(widths, p.layer_sizes[1..]);
    }

    #[test]
    fn trained_toy_beats_uninformative_reconstruction() {
        let (mut p, _) = toy(4, NoiseConfig::input_only(0.1), &[8, 12], true);
        let x = Matrix::from_rows(&[
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        ])
        .unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.5, 0.5, 1.0)).unwrap();
        let mut rng = RandomSource::new(8);
        for _ in 0..400 {
            gsn_train_step(&mut p, &x, &WalkbackConfig::fixed(2), &mut opt, &mut rng).unwrap();
        }
        let (r, _) = gsn_reconstruct_clean(&p, &x, 10).unwrap();
        let trained = bce_loss(&r, &x).unwrap().0;
        let flat = bce_loss(&Matrix::filled(3, 8, 0.5), &x).unwrap().0;
        assert!(trained < flat, "{trained} vs {flat}");
    }

    #[test]
    fn walkback_gradients_match_finite_differences() {
        for (seed, tied) in [(0, true), (1, false), (2, true), (3, false), (4, true)] {
            let noise = NoiseConfig::input_only(0.3).with_hidden_gaussian(0.0, 0.5);
            let (p, x) = toy(10 + seed, noise, &[5, 4, 3, 2], tied);
            let wb = WalkbackConfig::fixed(3);
            let report = gradcheck_report(
                |ps| {
                    let mut q = p.clone();
                    q.set_params(ps)?;
                    gsn_loss_and_grads(&q, &x, &wb, &mut RandomSource::new(77))
                },
                &p.params().into_iter().cloned().collect::<Vec<_>>(),
                1e-5,
                usize::MAX,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn tied_relation_survives_updates() {
        let (mut p, x) = toy(5, NoiseConfig::input_only(0.3), &[6, 4], true);
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut rng = RandomSource::new(1);
        gsn_train_step(&mut p, &x, &WalkbackConfig::fixed(2), &mut opt, &mut rng).unwrap();
        assert!(p.tied());
        assert_eq!(p.down_weight(0), p.up[0].transpose());
    }
}
