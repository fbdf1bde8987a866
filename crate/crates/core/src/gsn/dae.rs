//! Denoising auto-encoder coded directly, without the chain machinery.
//! Numerically it is the one-hidden-layer, one-step, input-noise-only GSN.

use super::GsnParams;
use crate::error::{Error, Result};
use crate::nn::{LossKind, OptimizerState};
use crate::tensor::{activate, Matrix, RandomSource, SaltPepperMask};

fn check(params: &GsnParams, x: &Matrix) -> Result<()> {
    if params.hidden_layers() != 1 || !params.tied() {
        return Err(Error::InvalidArgument(
            "denoising auto-encoder needs one tied hidden layer".into(),
        ));
    }
    if x.cols() != params.visible_width() {
        return Err(Error::shape(
            "dae",
            x.shape(),
            (x.rows(), params.visible_width()),
        ));
    }
    Ok(())
}

/// Corrupt, encode, decode; returns the reconstruction loss against the clean
/// input and gradients ordered as `[W, visible bias, hidden bias]`.
pub fn dae_loss_and_grads(
    params: &GsnParams,
    x: &Matrix,
    rng: &mut RandomSource,
) -> Result<(f64, Vec<Matrix>)> {
    check(params, x)?;
    let w = &params.up[0];
    let p = params.noise.salt_pepper_p;
    let mask = (p != 0.0)
        .then(|| SaltPepperMask::sample(x.rows(), x.cols(), p, rng))
        .transpose()?;
    let noisy = match &mask {
        Some(m) => m.apply(x)?,
        None => x.clone(),
    };

    let h = activate(
        &noisy.matmul(w)?.add_row(&params.biases[1])?,
        params.hidden_activation,
    );
    let out = activate(
        &h.matmul_nt(w)?.add_row(&params.biases[0])?,
        params.visible_activation,
    );
    let (loss, d_out) = match params.loss_kind() {
        LossKind::Bce => crate::nn::bce_loss(&out, x)?,
        LossKind::Mse => crate::nn::mse_loss(&out, x)?,
    };

    let va = params.visible_activation;
    let ha = params.hidden_activation;
    let d_vpre = d_out.zip_map(&out, |g, y| g * va.derivative_from_output(y))?;
    let d_h = d_vpre.matmul(w)?;
    let d_hpre = d_h.zip_map(&h, |g, y| g * ha.derivative_from_output(y))?;
    let mut d_w = noisy.matmul_tn(&d_hpre)?;
    d_w.add_assign(&d_vpre.matmul_tn(&h)?)?;
    Ok((loss, vec![d_w, d_vpre.col_sums(), d_hpre.col_sums()]))
}

/// One optimizer step; returns the loss before the step.
pub fn dae_train_step(
    params: &mut GsnParams,
    x: &Matrix,
    opt: &mut OptimizerState,
    rng: &mut RandomSource,
) -> Result<f64> {
    let (loss, grads) = dae_loss_and_grads(params, x, rng)?;
    opt.apply(&mut params.params_mut(), &grads)?;
    Ok(loss)
}
