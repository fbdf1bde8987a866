use crate::error::{Error, Result};
use crate::tensor::{activate, Activation, Matrix, RandomSource};

/// Single-layer LSTM without peepholes.
///
/// The four gate blocks are packed column-wise in the order
/// input, forget, output, candidate; each block is `hidden` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub input_weights: Matrix,
    pub recurrent_weights: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Matrix::zeros(batch, hidden),
            c: Matrix::zeros(batch, hidden),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Matrix,
    prev: LstmState,
    input_gate: Matrix,
    forget_gate: Matrix,
    output_gate: Matrix,
    candidate: Matrix,
    tanh_c: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub input_weights: Matrix,
    pub recurrent_weights: Matrix,
    pub bias: Matrix,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmCell {
    /// Scaled uniform init in `±1/sqrt(hidden)`; forget-gate bias 1.
    pub fn new(inputs: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |r, c| {
            let data = (0..r * c)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            Matrix::from_vec(r, c, data).expect("lstm init shape")
        };
        let input_weights = uniform(inputs, 4 * hidden);
        let recurrent_weights = uniform(hidden, 4 * hidden);
        let mut bias = Matrix::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            bias.set(0, j, FORGET_BIAS_INIT);
        }
        LstmCell {
            input_weights,
            recurrent_weights,
            bias,
        }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        LstmCell {
            input_weights: Matrix::zeros(inputs, 4 * hidden),
            recurrent_weights: Matrix::zeros(hidden, 4 * hidden),
            bias: Matrix::zeros(1, 4 * hidden),
        }
    }

    pub fn inputs(&self) -> usize {
        self.input_weights.rows()
    }

    pub fn hidden(&self) -> usize {
        self.recurrent_weights.rows()
    }
}

pub fn lstm_step(cell: &LstmCell, x: &Matrix, state: &LstmState) -> Result<(LstmState, LstmCache)> {
    let hidden = cell.hidden();
    if x.cols() != cell.inputs() {
        return Err(Error::shape(
            "lstm_step",
            x.shape(),
            cell.input_weights.shape(),
        ));
    }
    if state.h.shape() != (x.rows(), hidden) || state.c.shape() != (x.rows(), hidden) {
        return Err(Error::shape(
            "lstm_step",
            state.h.shape(),
            (x.rows(), hidden),
        ));
    }
    let z = x
        .matmul(&cell.input_weights)?
        .add(&state.h.matmul(&cell.recurrent_weights)?)?
        .add_row(&cell.bias)?;
    let input_gate = activate(&z.columns(0, hidden)?, Activation::Sigmoid);
    let forget_gate = activate(&z.columns(hidden, hidden)?, Activation::Sigmoid);
    let output_gate = activate(&z.columns(2 * hidden, hidden)?, Activation::Sigmoid);
    let candidate = activate(&z.columns(3 * hidden, hidden)?, Activation::Tanh);
    let c = forget_gate
        .hadamard(&state.c)?
        .add(&input_gate.hadamard(&candidate)?)?;
    let tanh_c = activate(&c, Activation::Tanh);
    let h = output_gate.hadamard(&tanh_c)?;
    let cache = LstmCache {
        x: x.clone(),
        prev: state.clone(),
        input_gate,
        forget_gate,
        output_gate,
        candidate,
        tanh_c,
    };
    Ok((LstmState { h, c }, cache))
}

/// Backpropagates `d_h`/`d_c` (gradients on the step's outputs) to the
/// input, the previous state and the cell parameters.
pub fn lstm_step_backward(
    cell: &LstmCell,
    cache: &LstmCache,
    d_h: &Matrix,
    d_c: &Matrix,
) -> Result<(Matrix, LstmState, LstmGrads)> {
    if d_h.shape() != cache.tanh_c.shape() || d_c.shape() != cache.tanh_c.shape() {
        return Err(Error::shape(
            "lstm_step_backward",
            d_h.shape(),
            cache.tanh_c.shape(),
        ));
    }
    let d_o = d_h.hadamard(&cache.tanh_c)?;
    let through_h = d_h
        .hadamard(&cache.output_gate)?
        .zip_map(&cache.tanh_c, |g, t| g * (1.0 - t * t))?;
    let d_cell = d_c.add(&through_h)?;
    let d_f = d_cell.hadamard(&cache.prev.c)?;
    let d_i = d_cell.hadamard(&cache.candidate)?;
    let d_g = d_cell.hadamard(&cache.input_gate)?;
    let d_c_prev = d_cell.hadamard(&cache.forget_gate)?;

    let sig = |d: &Matrix, y: &Matrix| d.zip_map(y, |g, y| g * y * (1.0 - y));
    let dz = Matrix::hstack(&[
        &sig(&d_i, &cache.input_gate)?,
        &sig(&d_f, &cache.forget_gate)?,
        &sig(&d_o, &cache.output_gate)?,
        &d_g.zip_map(&cache.candidate, |g, y| g * (1.0 - y * y))?,
    ])?;
    let grads = LstmGrads {
        input_weights: cache.x.matmul_tn(&dz)?,
        recurrent_weights: cache.prev.h.matmul_tn(&dz)?,
        bias: dz.col_sums(),
    };
    let d_x = dz.matmul_nt(&cell.input_weights)?;
    let d_h_prev = dz.matmul_nt(&cell.recurrent_weights)?;
    Ok((
        d_x,
        LstmState {
            h: d_h_prev,
            c: d_c_prev,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::tensor::gaussian;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_cell_zero_state_gives_zero_hidden() {
        let cell = LstmCell::zeros(3, 2);
        let x = Matrix::filled(4, 3, 0.9);
        let (s, _) = lstm_step(&cell, &x, &LstmState::zeros(4, 2)).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_accumulates() {
        let mut rng = RandomSource::new(1);
        let mut cell = LstmCell::new(3, 4, &mut rng);
        for j in 4..8 {
            cell.bias.set(0, j, 50.0);
        }
        let x = gaussian(2, 3, 0.0, 0.5, &mut rng).unwrap();
        let prev = LstmState {
            h: gaussian(2, 4, 0.0, 0.3, &mut rng).unwrap(),
            c: gaussian(2, 4, 0.0, 1.0, &mut rng).unwrap(),
        };
        let (next, cache) = lstm_step(&cell, &x, &prev).unwrap();
        let expected = prev
            .c
            .add(&cache.input_gate.hadamard(&cache.candidate).unwrap())
            .unwrap();
        for (a, b) in next.c.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_unit_hand_arithmetic() {
        // input 1, hidden 1: gate pre-activations z = x*wx + h*wh + b
        let cell = LstmCell {
            input_weights: Matrix::row_vector(vec![0.5, -0.3, 0.8, 0.2]),
            recurrent_weights: Matrix::row_vector(vec![0.1, 0.4, -0.2, 0.7]),
            bias: Matrix::row_vector(vec![0.0, 1.0, 0.1, -0.1]),
        };
        let (x, h, c) = (0.9, -0.4, 0.3);
        let prev = LstmState {
            h: Matrix::row_vector(vec![h]),
            c: Matrix::row_vector(vec![c]),
        };
        let (next, _) = lstm_step(&cell, &Matrix::row_vector(vec![x]), &prev).unwrap();
        let i = sigmoid(x * 0.5 + h * 0.1 + 0.0);
        let f = sigmoid(x * -0.3 + h * 0.4 + 1.0);
        let o = sigmoid(x * 0.8 + h * -0.2 + 0.1);
        let g = (x * 0.2 + h * 0.7 - 0.1).tanh();
        let c_new = f * c + i * g;
        let h_new = o * c_new.tanh();
        assert!((next.c.get(0, 0) - c_new).abs() < 1e-15);
        assert!((next.h.get(0, 0) - h_new).abs() < 1e-15);
    }

    #[test]
    fn hidden_output_bounded() {
        let mut rng = RandomSource::new(2);
        let cell = LstmCell::new(5, 6, &mut rng);
        let mut state = LstmState::zeros(3, 6);
        for _ in 0..50 {
            let x = gaussian(3, 5, 0.0, 10.0, &mut rng).unwrap();
            state = lstm_step(&cell, &x, &state).unwrap().0;
            assert!(state.h.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cell = LstmCell::zeros(3, 2);
        assert!(lstm_step(&cell, &Matrix::zeros(1, 4), &LstmState::zeros(1, 2)).is_err());
        assert!(lstm_step(&cell, &Matrix::zeros(1, 3), &LstmState::zeros(2, 2)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = RandomSource::new(200 + seed);
            let cell = LstmCell::new(3, 4, &mut rng);
            let x = gaussian(2, 3, 0.0, 1.0, &mut rng).unwrap();
            let h0 = gaussian(2, 4, 0.0, 0.5, &mut rng).unwrap();
            let c0 = gaussian(2, 4, 0.0, 0.5, &mut rng).unwrap();
            let ph = gaussian(2, 4, 0.0, 1.0, &mut rng).unwrap();
            let pc = gaussian(2, 4, 0.0, 1.0, &mut rng).unwrap();
            let f = |ps: &[Matrix]| -> Result<(f64, Vec<Matrix>)> {
                let cell = LstmCell {
                    input_weights: ps[0].clone(),
                    recurrent_weights: ps[1].clone(),
                    bias: ps[2].clone(),
                };
                let prev = LstmState {
                    h: ps[4].clone(),
                    c: ps[5].clone(),
                };
                let (next, cache) = lstm_step(&cell, &ps[3], &prev)?;
                let loss = next.h.hadamard(&ph)?.sum() + next.c.hadamard(&pc)?.sum();
                let (dx, dprev, g) = lstm_step_backward(&cell, &cache, &ph, &pc)?;
                Ok((
                    loss,
                    vec![
                        g.input_weights,
                        g.recurrent_weights,
                        g.bias,
                        dx,
                        dprev.h,
                        dprev.c,
                    ],
                ))
            };
            let params = [
                cell.input_weights.clone(),
                cell.recurrent_weights.clone(),
                cell.bias.clone(),
                x,
                h0,
                c0,
            ];
            let err = gradcheck(f, &params, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
