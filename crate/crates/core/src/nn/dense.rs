use crate::error::{Error, Result};
use crate::tensor::{activate, Activation, Matrix, RandomSource};

/// `activation(x · W + b)` applied row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

/// Values kept from the forward pass for [`dense_backward`].
#[derive(Clone, Debug)]
pub struct DenseCache {
    pub input: Matrix,
    pub output: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Matrix,
}

impl DenseLayer {
    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn new(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut RandomSource,
    ) -> Self {
        DenseLayer {
            weights: super::glorot_uniform(inputs, outputs, rng),
            bias: Matrix::zeros(1, outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Matrix::zeros(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }
}

pub fn dense_forward(layer: &DenseLayer, x: &Matrix) -> Result<(Matrix, DenseCache)> {
    let pre = x.matmul(&layer.weights)?.add_row(&layer.bias)?;
    let output = activate(&pre, layer.activation);
    Ok((
        output.clone(),
        DenseCache {
            input: x.clone(),
            output,
        },
    ))
}

/// Returns the gradient with respect to the input and the parameters.
pub fn dense_backward(
    layer: &DenseLayer,
    cache: &DenseCache,
    upstream: &Matrix,
) -> Result<(Matrix, DenseGrads)> {
    if upstream.shape() != cache.output.shape() {
        return Err(Error::shape(
            "dense_backward",
            upstream.shape(),
            cache.output.shape(),
        ));
    }
    if cache.input.cols() != layer.inputs() || cache.output.cols() != layer.outputs() {
        return Err(Error::shape(
            "dense_backward",
            cache.input.shape(),
            layer.weights.shape(),
        ));
    }
    let act = layer.activation;
    let d_pre = upstream.zip_map(&cache.output, |g, y| g * act.derivative_from_output(y))?;
    let weights = cache.input.matmul_tn(&d_pre)?;
    let bias = d_pre.col_sums();
    let input_grad = d_pre.matmul_nt(&layer.weights)?;
    Ok((input_grad, DenseGrads { weights, bias }))
}
