//! Reverse-mode tape restricted to the operations the model graphs need.
//!
//! Nodes are appended in evaluation order, so a backward sweep from a loss
//! node only has to visit the nodes created before it. Parameters enter the
//! tape either as trainable leaves tagged with a parameter index or as
//! constants; constants (and anything computed only from constants) never
//! receive gradients, which is how parameter groups are frozen.

use std::borrow::Cow;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::{clamp_prob, BCE_EPS};
use crate::tensor::{Activation, Matrix, SaltPepperMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Concat(Vec<Var>),
    Columns(Var, usize),
    Mask(Var, Rc<SaltPepperMask>),
    Bce(Var, Var),
    Mse(Var, Var),
}

#[derive(Clone, Debug)]
struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients keyed by parameter index.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    grads: Vec<Option<Matrix>>,
}

impl ParamGrads {
    pub fn get(&self, id: usize) -> Option<&Matrix> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    fn accumulate(&mut self, id: usize, g: Matrix) {
        if self.grads.len() <= id {
            self.grads.resize(id + 1, None);
        }
        match &mut self.grads[id] {
            Some(acc) => acc.add_assign(&g).expect("param grad shape"),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `other` scaled by `factor` into `self`.
    pub fn merge_scaled(&mut self, other: ParamGrads, factor: f64) {
        for (id, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(id, g.scale(factor));
            }
        }
    }

    /// Dense gradient list in parameter order; unreached parameters get zeros.
    pub fn into_dense(mut self, shapes: &[(usize, usize)]) -> Vec<Matrix> {
        shapes
            .iter()
            .enumerate()
            .map(|(id, &(r, c))| {
                self.grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Matrix::zeros(r, c))
            })
            .collect()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, false)
    }

    pub fn param(&mut self, id: usize, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Param(id), true)
    }

    pub fn param_owned(&mut self, id: usize, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Param(id), true)
    }

    /// Copy of `v`'s value that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    fn binary(&mut self, value: Matrix, op: Op, a: Var, b: Var) -> Var {
        let grad = self.nodes[a.0].grad || self.nodes[b.0].grad;
        self.push(Cow::Owned(value), op, grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(v, Op::MatMul(a, b), a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.binary(v, Op::MatMulNT(a, b), a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.binary(v, Op::Add(a, b), a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.binary(v, Op::Sub(a, b), a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.binary(v, Op::Mul(a, b), a, b))
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.value(x).add_row(self.value(row))?;
        Ok(self.binary(v, Op::AddRow(x, row), x, row))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).scale(factor);
        let grad = self.nodes[x.0].grad;
        self.push(Cow::Owned(v), Op::Scale(x, factor), grad)
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let v = self.value(x).map(|z| kind.apply(z));
        let grad = self.nodes[x.0].grad;
        self.push(Cow::Owned(v), Op::Act(x, kind), grad)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hstack(&mats)?;
        let grad = parts.iter().any(|p| self.nodes[p.0].grad);
        Ok(self.push(Cow::Owned(v), Op::Concat(parts.to_vec()), grad))
    }

    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start == 0 && len == self.value(x).cols() {
            return Ok(x);
        }
        let v = self.value(x).columns(start, len)?;
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Cow::Owned(v), Op::Columns(x, start), grad))
    }

    /// Salt-and-pepper corruption with a realised mask; gradient passes only
    /// through kept elements.
    pub fn salt_pepper(&mut self, x: Var, mask: Rc<SaltPepperMask>) -> Result<Var> {
        let v = mask.apply(self.value(x))?;
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Cow::Owned(v), Op::Mask(x, mask), grad))
    }

    /// Mean binary cross-entropy as a `1 × 1` node.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (loss, _) = crate::nn::bce_loss(self.value(pred), self.value(target))?;
        Ok(self.binary(
            Matrix::row_vector(vec![loss]),
            Op::Bce(pred, target),
            pred,
            target,
        ))
    }

    /// Mean squared error as a `1 × 1` node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (loss, _) = crate::nn::mse_loss(self.value(pred), self.value(target))?;
        Ok(self.binary(
            Matrix::row_vector(vec![loss]),
            Op::Mse(pred, target),
            pred,
            target,
        ))
    }

    pub fn loss(&mut self, kind: crate::nn::LossKind, pred: Var, target: Var) -> Result<Var> {
        match kind {
            crate::nn::LossKind::Bce => self.bce(pred, target),
            crate::nn::LossKind::Mse => self.mse(pred, target),
        }
    }

    /// Mean of `1 × 1` nodes.
    pub fn mean(&mut self, terms: &[Var]) -> Result<Var> {
        let total = self.sum(terms)?;
        Ok(self.scale(total, 1.0 / terms.len() as f64))
    }

    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("sum of no terms".into()))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Gradients of the `1 × 1` node `loss` with respect to every trainable
    /// parameter leaf it depends on.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward", self.value(loss).shape(), (1, 1)));
        }
        let mut out = ParamGrads::default();
        if !self.nodes[loss.0].grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].grad {
                        let ga = g.matmul_nt(self.value(*b))?;
                        add_grad(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].grad {
                        let gb = self.value(*a).matmul_tn(&g)?;
                        add_grad(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.nodes[a.0].grad {
                        let ga = g.matmul(self.value(*b))?;
                        add_grad(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].grad {
                        let gb = g.matmul_tn(self.value(*a))?;
                        add_grad(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].grad {
                        add_grad(&mut grads, *b, g.clone());
                    }
                    if self.nodes[a.0].grad {
                        add_grad(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[b.0].grad {
                        add_grad(&mut grads, *b, g.scale(-1.0));
                    }
                    if self.nodes[a.0].grad {
                        add_grad(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].grad {
                        let ga = g.hadamard(self.value(*b))?;
                        add_grad(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].grad {
                        let gb = g.hadamard(self.value(*a))?;
                        add_grad(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.nodes[row.0].grad {
                        add_grad(&mut grads, *row, g.col_sums());
                    }
                    if self.nodes[x.0].grad {
                        add_grad(&mut grads, *x, g);
                    }
                }
                Op::Scale(x, f) => add_grad(&mut grads, *x, g.scale(*f)),
                Op::Act(x, kind) => {
                    let k = *kind;
                    let gx = g.zip_map(&node.value, |gv, y| gv * k.derivative_from_output(y))?;
                    add_grad(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.nodes[p.0].grad {
                            add_grad(&mut grads, *p, g.columns(start, w)?);
                        }
                        start += w;
                    }
                }
                Op::Columns(x, start) => {
                    let src = self.value(*x);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    let w = g.cols();
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                    }
                    add_grad(&mut grads, *x, gx);
                }
                Op::Mask(x, mask) => add_grad(&mut grads, *x, mask.mask_gradient(&g)),
                Op::Bce(p, t) => {
                    let s = g.data()[0];
                    let pred = self.value(*p);
                    let target = self.value(*t);
                    let n = pred.len() as f64;
                    if self.nodes[p.0].grad {
                        let gp = pred.zip_map(target, |p, t| {
                            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                                0.0
                            } else {
                                s * (p - t) / (p * (1.0 - p)) / n
                            }
                        })?;
                        add_grad(&mut grads, *p, gp);
                    }
                    if self.nodes[t.0].grad {
                        let gt = pred.map(|p| {
                            let p = clamp_prob(p);
                            s * ((1.0 - p).ln() - p.ln()) / n
                        });
                        add_grad(&mut grads, *t, gt);
                    }
                }
                Op::Mse(p, t) => {
                    let s = g.data()[0];
                    let n = self.value(*p).len() as f64;
                    let gp = self
                        .value(*p)
                        .zip_map(self.value(*t), |p, t| s * 2.0 * (p - t) / n)?;
                    if self.nodes[t.0].grad {
                        add_grad(&mut grads, *t, gp.scale(-1.0));
                    }
                    if self.nodes[p.0].grad {
                        add_grad(&mut grads, *p, gp);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn add_grad(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g).expect("gradient shape"),
        slot @ None => *slot = Some(g),
    }
}
