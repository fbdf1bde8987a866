use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Matrix;

/// Affine map from the `window` most recent hidden stacks to the next one.
///
/// A stack is flattened by concatenating layers 1..N; the history is ordered
/// oldest to newest. Missing history at the start of a sequence is padded
/// with zero stacks on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearTransition {
    pub window: usize,
    pub layer_widths: Vec<usize>,
    pub weights: Matrix,
    pub bias: Matrix,
}

impl LinearTransition {
    /// Starts as "copy the newest stack": identity on the newest block, zero
    /// elsewhere.
    pub fn new(window: usize, layer_widths: &[usize]) -> Result<Self> {
        let mut t = LinearTransition::zeros(window, layer_widths)?;
        let total = t.total_width();
        let offset = (window - 1) * total;
        for j in 0..total {
            t.weights.set(offset + j, j, 1.0);
        }
        Ok(t)
    }

    pub fn zeros(window: usize, layer_widths: &[usize]) -> Result<Self> {
        if window == 0 || layer_widths.is_empty() {
            return Err(Error::InvalidArgument(
                "transition needs a window of at least 1 and at least one layer".into(),
            ));
        }
        let total: usize = layer_widths.iter().sum();
        Ok(LinearTransition {
            window,
            layer_widths: layer_widths.to_vec(),
            weights: Matrix::zeros(window * total, total),
            bias: Matrix::zeros(1, total),
        })
    }

    pub fn total_width(&self) -> usize {
        self.layer_widths.iter().sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        vec!["transition.weights".into(), "transition.bias".into()]
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        vec![self.weights.shape(), self.bias.shape()]
    }

    pub fn zero_stack(&self, batch: usize) -> Vec<Matrix> {
        self.layer_widths
            .iter()
            .map(|&n| Matrix::zeros(batch, n))
            .collect()
    }

    /// Last `window` entries of `past` plus `newest`, left-padded with zeros.
    pub fn padded_history<'h>(
        &self,
        past: &'h [Vec<Matrix>],
        newest: &'h [Matrix],
        pad: &'h [Matrix],
    ) -> Vec<&'h [Matrix]> {
        let keep = self.window - 1;
        let mut out: Vec<&[Matrix]> = Vec::with_capacity(self.window);
        let have = past.len().min(keep);
        for _ in have..keep {
            out.push(pad);
        }
        out.extend(past[past.len() - have..].iter().map(Vec::as_slice));
        out.push(newest);
        out
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>, first_id: Option<usize>) -> (Var, Var) {
        match first_id {
            Some(i) => (g.param(i, &self.weights), g.param(i + 1, &self.bias)),
            None => (g.constant_ref(&self.weights), g.constant_ref(&self.bias)),
        }
    }

    /// Tape version of [`transition_predict`]; `history` holds one stack of
    /// layer nodes per window slot.
    pub(crate) fn predict_graph(
        &self,
        g: &mut Graph<'_>,
        vars: (Var, Var),
        history: &[Vec<Var>],
    ) -> Result<Vec<Var>> {
        if history.len() != self.window {
            return Err(Error::InvalidArgument(format!(
                "transition window is {}, got {} stacks",
                self.window,
                history.len()
            )));
        }
        let parts: Vec<Var> = history.iter().flatten().copied().collect();
        let flat = g.concat(&parts)?;
        let out = g.matmul(flat, vars.0)?;
        let out = g.add_row(out, vars.1)?;
        let mut start = 0;
        let mut layers = Vec::with_capacity(self.layer_widths.len());
        for &n in &self.layer_widths {
            layers.push(g.columns(out, start, n)?);
            start += n;
        }
        Ok(layers)
    }
}

/// Predicted next hidden stack from exactly `window` past stacks (oldest
/// first). Callers pad short histories with zero stacks.
pub fn transition_predict(t: &LinearTransition, history: &[&[Matrix]]) -> Result<Vec<Matrix>> {
    if history.len() != t.window {
        return Err(Error::InvalidArgument(format!(
            "transition window is {}, got {} stacks",
            t.window,
            history.len()
        )));
    }
    let mut g = Graph::new();
    let vars = t.bind(&mut g, None);
    let nodes: Vec<Vec<Var>> = history
        .iter()
        .map(|stack| {
            if stack.len() != t.layer_widths.len() {
                return Err(Error::InvalidArgument(format!(
                    "hidden stack has {} layers, transition expects {}",
                    stack.len(),
                    t.layer_widths.len()
                )));
            }
            Ok(stack.iter().map(|m| g.constant_ref(m)).collect())
        })
        .collect::<Result<_>>()?;
    let out = t.predict_graph(&mut g, vars, &nodes)?;
    Ok(out.iter().map(|&v| g.value(v).clone()).collect())
}
