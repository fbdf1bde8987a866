//! Dense and LSTM layers expressed on the tape, for models whose gradients
//! flow through GSN chains.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::nn::{DenseLayer, LstmCell};
use crate::tensor::Activation;

#[derive(Clone, Copy, Debug)]
pub(crate) struct DenseVars {
    pub weights: Var,
    pub bias: Var,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmVars {
    pub input_weights: Var,
    pub recurrent_weights: Var,
    pub bias: Var,
    pub hidden: usize,
}

fn leaf<'a>(g: &mut Graph<'a>, id: &mut Option<usize>, m: &'a crate::tensor::Matrix) -> Var {
    match id {
        Some(i) => {
            let v = g.param(*i, m);
            *i += 1;
            v
        }
        None => g.constant_ref(m),
    }
}

pub(crate) fn bind_dense<'a>(
    g: &mut Graph<'a>,
    layer: &'a DenseLayer,
    id: &mut Option<usize>,
) -> DenseVars {
    DenseVars {
        weights: leaf(g, id, &layer.weights),
        bias: leaf(g, id, &layer.bias),
        activation: layer.activation,
    }
}

pub(crate) fn bind_lstm<'a>(
    g: &mut Graph<'a>,
    cell: &'a LstmCell,
    id: &mut Option<usize>,
) -> LstmVars {
    LstmVars {
        input_weights: leaf(g, id, &cell.input_weights),
        recurrent_weights: leaf(g, id, &cell.recurrent_weights),
        bias: leaf(g, id, &cell.bias),
        hidden: cell.hidden(),
    }
}

pub(crate) fn dense(g: &mut Graph<'_>, v: &DenseVars, x: Var) -> Result<Var> {
    let pre = g.matmul(x, v.weights)?;
    let pre = g.add_row(pre, v.bias)?;
    Ok(g.act(pre, v.activation))
}

/// Returns `(h, c)`; gate layout matches [`crate::nn::lstm_step`].
pub(crate) fn lstm(g: &mut Graph<'_>, v: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let n = v.hidden;
    let zx = g.matmul(x, v.input_weights)?;
    let zh = g.matmul(h, v.recurrent_weights)?;
    let z = g.add(zx, zh)?;
    let z = g.add_row(z, v.bias)?;
    let gate = |g: &mut Graph<'_>, k: usize, act| -> Result<Var> {
        let cols = g.columns(z, k * n, n)?;
        Ok(g.act(cols, act))
    };
    let i = gate(g, 0, Activation::Sigmoid)?;
    let f = gate(g, 1, Activation::Sigmoid)?;
    let o = gate(g, 2, Activation::Sigmoid)?;
    let cand = gate(g, 3, Activation::Tanh)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.act(c_new, Activation::Tanh);
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}
