//! Tape-based reverse-mode differentiation over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and a single reverse sweep visits every node after all of its
//! consumers.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::autodiff::params::ParamId;
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, transpose_b: bool },
    Tanh(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Dot(Var, Var),
    L2Norm(Var),
    Concat(Vec<Var>),
    Select { src: Var, rows: Range<usize> },
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter recorded on the tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.by_param.insert(id, grad);
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        self.push(Op::Param(id), value.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b), false)?;
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                transpose_b: false,
            },
            v,
        ))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b), true)?;
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                transpose_b: true,
            },
            v,
        ))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    /// Inner product of two same-shaped nodes.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.expect_shape(y.shape(), "dot operand")?;
        let v = Tensor::scalar(dot(&x.data, &y.data));
        Ok(self.push(Op::Dot(a, b), v))
    }

    /// Euclidean norm over all entries. The gradient at the origin is taken
    /// to be zero (the minimum-norm subgradient).
    pub fn l2norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).norm());
        self.push(Op::L2Norm(a), v)
    }

    /// Stacks nodes with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::invalid("concat", "no operands"));
        };
        let cols = self.value(*first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols != cols {
                return Err(Error::dim("concat columns", cols, t.cols));
            }
            rows += t.rows;
            data.extend_from_slice(&t.data);
        }
        let v = Tensor { rows, cols, data };
        Ok(self.push(Op::Concat(parts.to_vec()), v))
    }

    pub fn select_rows(&mut self, src: Var, rows: Range<usize>) -> Result<Var> {
        let t = self.value(src);
        if rows.start > rows.end || rows.end > t.rows {
            return Err(Error::invalid(
                "row selection",
                format!("{rows:?} out of bounds for {} rows", t.rows),
            ));
        }
        let v = Tensor {
            rows: rows.len(),
            cols: t.cols,
            data: t.data[rows.start * t.cols..rows.end * t.cols].to_vec(),
        };
        Ok(self.push(Op::Select { src, rows }, v))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).reshaped(rows, cols)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Cosine similarity of two same-shaped nodes, built from primitive ops.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let num = self.dot(a, b)?;
        let na = self.l2norm(a);
        let nb = self.l2norm(b);
        let den = self.mul(na, nb)?;
        self.div(num, den)
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a 1x1 scalar, got {}x{}", lv.rows, lv.cols),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match out.by_param.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.by_param.insert(*id, g);
                    }
                },
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = g.zip_map(bv, |x, y| x / y)?;
                    let mut gb = g.zip_map(&node.value, |x, q| -x * q)?;
                    for (v, d) in gb.data.iter_mut().zip(&bv.data) {
                        *v /= d;
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::MatMul { a, b, transpose_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if *transpose_b {
                        // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                        let ga = g.matmul(bv, false)?;
                        let gb = g.transpose().matmul(av, false)?;
                        accumulate(&mut grads, *a, ga);
                        accumulate(&mut grads, *b, gb);
                    } else {
                        let ga = g.matmul(bv, true)?;
                        let gb = av.transpose().matmul(&g, false)?;
                        accumulate(&mut grads, *a, ga);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    // y ⊙ (g − ⟨g, y⟩) per row
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let s = dot(g.row(r), yr);
                        for (v, &yv) in ga.row_mut(r).iter_mut().zip(yr) {
                            *v = yv * (*v - s);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::filled(x.rows, x.cols, g.item()));
                }
                Op::Dot(a, b) => {
                    let s = g.item();
                    let ga = self.value(*b).scale(s);
                    let gb = self.value(*a).scale(s);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::L2Norm(a) => {
                    let x = self.value(*a);
                    let n = node.value.item();
                    let ga = if n > 0.0 {
                        x.scale(g.item() / n)
                    } else {
                        Tensor::zeros(x.rows, x.cols)
                    };
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let n = t.len();
                        let slice = Tensor {
                            rows: t.rows,
                            cols: t.cols,
                            data: g.data[offset..offset + n].to_vec(),
                        };
                        offset += n;
                        accumulate(&mut grads, *p, slice);
                    }
                }
                Op::Select { src, rows } => {
                    let t = self.value(*src);
                    let mut gs = Tensor::zeros(t.rows, t.cols);
                    gs.data[rows.start * t.cols..rows.end * t.cols].copy_from_slice(&g.data);
                    accumulate(&mut grads, *src, gs);
                }
                Op::Reshape(a) => {
                    let t = self.value(*a);
                    accumulate(&mut grads, *a, g.reshaped(t.rows, t.cols)?);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: Var, g: Tensor) {
    match &mut grads[target.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
