use std::cell::{Ref, RefCell};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `x + bias`, with a `1 x c` bias repeated over every row.
    AddBias(usize, usize),
    /// `x * col`, with an `r x 1` column repeated over every column.
    MulCol(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize, Axis),
    Concat(Vec<usize>, Axis),
    Slice(usize, Axis, usize),
    Mean(usize),
    SumSquares(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a, _)
            | Op::Slice(a, _, _)
            | Op::Mean(a)
            | Op::SumSquares(a) => vec![*a],
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

/// Matrix axis: `Rows` runs down a column (axis 0), `Cols` along a row (axis 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order for a reverse sweep.
///
/// A tape is single-threaded and meant to live for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.idx, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.idx].value.shape() != [1, 1] {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                nodes[loss.idx].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.idx).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].requires_grad;
            let acc = |i: usize, d: Tensor, grads: &mut Vec<Option<Tensor>>| match &mut grads[i] {
                Some(t) => t.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        let mut d = Tensor::zeros(val(*a).shape());
                        gemm(&g, false, val(*b), true, &mut d, false);
                        acc(*a, d, &mut grads);
                    }
                    if wants(*b) {
                        let mut d = Tensor::zeros(val(*b).shape());
                        gemm(val(*a), true, &g, false, &mut d, false);
                        acc(*b, d, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        acc(*a, g.clone(), &mut grads);
                    }
                    if wants(*b) {
                        acc(*b, g, &mut grads);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        acc(*a, g.clone(), &mut grads);
                    }
                    if wants(*b) {
                        acc(*b, g.map(|v| -v), &mut grads);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(*a, g.zip_map(val(*b), |x, y| x * y), &mut grads);
                    }
                    if wants(*b) {
                        acc(*b, g.zip_map(val(*a), |x, y| x * y), &mut grads);
                    }
                }
                Op::AddBias(a, b) => {
                    if wants(*b) {
                        let cols = g.cols();
                        let mut d = Tensor::zeros([1, cols]);
                        for row in g.data().chunks(cols) {
                            for (o, v) in d.data_mut().iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        acc(*b, d, &mut grads);
                    }
                    if wants(*a) {
                        acc(*a, g, &mut grads);
                    }
                }
                Op::MulCol(a, c) => {
                    let cols = g.cols();
                    if wants(*c) {
                        let mut d = Tensor::zeros([g.rows(), 1]);
                        for (r, (gr, xr)) in g
                            .data()
                            .chunks(cols)
                            .zip(val(*a).data().chunks(cols))
                            .enumerate()
                        {
                            d.data_mut()[r] = gr.iter().zip(xr).map(|(x, y)| x * y).sum();
                        }
                        acc(*c, d, &mut grads);
                    }
                    if wants(*a) {
                        let col = val(*c).data();
                        let mut d = g;
                        for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                            row.iter_mut().for_each(|v| *v *= col[r]);
                        }
                        acc(*a, d, &mut grads);
                    }
                }
                Op::Scale(a, f) => {
                    if wants(*a) {
                        let f = *f;
                        acc(*a, g.map(|v| v * f), &mut grads);
                    }
                }
                Op::Sigmoid(a) => {
                    if wants(*a) {
                        acc(*a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y)), &mut grads);
                    }
                }
                Op::Tanh(a) => {
                    if wants(*a) {
                        acc(*a, g.zip_map(&node.value, |d, y| d * (1.0 - y * y)), &mut grads);
                    }
                }
                Op::Softmax(a, axis) => {
                    if wants(*a) {
                        acc(*a, softmax_backward(&node.value, &g, *axis), &mut grads);
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = val(p).shape();
                        let extent = match axis {
                            Axis::Cols => shape[1],
                            Axis::Rows => shape[0],
                        };
                        if wants(p) {
                            acc(p, slice(&g, *axis, offset, offset + extent), &mut grads);
                        }
                        offset += extent;
                    }
                }
                Op::Slice(a, axis, start) => {
                    if wants(*a) {
                        let mut d = Tensor::zeros(val(*a).shape());
                        write_slice(&mut d, &g, *axis, *start);
                        acc(*a, d, &mut grads);
                    }
                }
                Op::Mean(a) => {
                    if wants(*a) {
                        let n = val(*a).len() as f64;
                        let v = g.item() / n;
                        acc(*a, Tensor::filled(val(*a).shape(), v), &mut grads);
                    }
                }
                Op::SumSquares(a) => {
                    if wants(*a) {
                        let s = 2.0 * g.item();
                        acc(*a, val(*a).map(|x| s * x), &mut grads);
                    }
                }
            }
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match g {
                Some(g) if matches!(nodes[i].op, Op::Leaf) && nodes[i].requires_grad => Some(g),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of the loss with respect to every trainable leaf it depends on.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

fn softmax_forward(x: &Tensor, axis: Axis) -> Tensor {
    let [r, c] = x.shape();
    let mut out = x.clone();
    let lanes: Vec<Vec<usize>> = match axis {
        Axis::Cols => (0..r).map(|i| (0..c).map(|j| i * c + j).collect()).collect(),
        Axis::Rows => (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect(),
    };
    let d = out.data_mut();
    for lane in lanes {
        let max = lane.iter().map(|&i| d[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &i in &lane {
            d[i] = (d[i] - max).exp();
            sum += d[i];
        }
        for &i in &lane {
            d[i] /= sum;
        }
    }
    out
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: Axis) -> Tensor {
    let [r, c] = y.shape();
    let mut out = Tensor::zeros([r, c]);
    let (lanes, len) = match axis {
        Axis::Cols => (r, c),
        Axis::Rows => (c, r),
    };
    for l in 0..lanes {
        let at = |k: usize| match axis {
            Axis::Cols => l * c + k,
            Axis::Rows => k * c + l,
        };
        let dot: f64 = (0..len).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
        for k in 0..len {
            let i = at(k);
            out.data_mut()[i] = y.data()[i] * (g.data()[i] - dot);
        }
    }
    out
}

fn slice(x: &Tensor, axis: Axis, start: usize, end: usize) -> Tensor {
    let [r, c] = x.shape();
    match axis {
        Axis::Cols => {
            let w = end - start;
            let mut data = Vec::with_capacity(r * w);
            for row in x.data().chunks(c) {
                data.extend_from_slice(&row[start..end]);
            }
            Tensor::new([r, w], data).expect("slice shape")
        }
        Axis::Rows => Tensor::new([end - start, c], x.data()[start * c..end * c].to_vec())
            .expect("slice shape"),
    }
}

fn write_slice(dst: &mut Tensor, src: &Tensor, axis: Axis, start: usize) {
    let c = dst.cols();
    match axis {
        Axis::Cols => {
            let w = src.cols();
            for (drow, srow) in dst.data_mut().chunks_mut(c).zip(src.data().chunks(w)) {
                drow[start..start + w].copy_from_slice(srow);
            }
        }
        Axis::Rows => {
            let n = src.len();
            dst.data_mut()[start * c..start * c + n].copy_from_slice(src.data());
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.idx].value)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.idx].value.shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::shape("operands recorded on different tapes"))
        }
    }

    fn binary_same_shape(&self, other: Var<'t>, name: &str) -> Result<()> {
        self.same_tape(&other)?;
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::shape(format!("{name} {a:?} vs {b:?}")));
        }
        Ok(())
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = self.value().matmul(&other.value())?;
        Ok(self.tape.record(out, Op::MatMul(self.idx, other.idx)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "add")?;
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self.tape.record(out, Op::Add(self.idx, other.idx)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "sub")?;
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self.tape.record(out, Op::Sub(self.idx, other.idx)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(other, "mul")?;
        let out = self.value().zip_map(&other.value(), |a, b| a * b);
        Ok(self.tape.record(out, Op::Mul(self.idx, other.idx)))
    }

    /// Adds a `1 x c` bias to every row.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias)?;
        let [r, c] = self.shape();
        if bias.shape() != [1, c] {
            return Err(Error::shape(format!("bias {:?} for {:?}", bias.shape(), [r, c])));
        }
        let mut out = self.value().clone();
        {
            let b = bias.value();
            for row in out.data_mut().chunks_mut(c) {
                for (v, bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
        }
        Ok(self.tape.record(out, Op::AddBias(self.idx, bias.idx)))
    }

    /// Scales row `i` by `col[i]` for an `r x 1` column.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&col)?;
        let [r, c] = self.shape();
        if col.shape() != [r, 1] {
            return Err(Error::shape(format!("column {:?} for {:?}", col.shape(), [r, c])));
        }
        let mut out = self.value().clone();
        {
            let w = col.value();
            for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
                row.iter_mut().for_each(|v| *v *= w.data()[i]);
            }
        }
        Ok(self.tape.record(out, Op::MulCol(self.idx, col.idx)))
    }

    pub fn scale(self, f: f64) -> Var<'t> {
        let out = self.value().map(|v| v * f);
        self.tape.record(out, Op::Scale(self.idx, f))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = self.value().map(sigmoid);
        self.tape.record(out, Op::Sigmoid(self.idx))
    }

    pub fn tanh(self) -> Var<'t> {
        let out = self.value().map(f64::tanh);
        self.tape.record(out, Op::Tanh(self.idx))
    }

    pub fn softmax(self, axis: Axis) -> Var<'t> {
        let out = softmax_forward(&self.value(), axis);
        self.tape.record(out, Op::Softmax(self.idx, axis))
    }

    pub fn concat(parts: &[Var<'t>], axis: Axis) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let tape = first.tape;
        for p in parts {
            first.same_tape(p)?;
        }
        let shapes: Vec<[usize; 2]> = parts.iter().map(|p| p.shape()).collect();
        let out = match axis {
            Axis::Cols => {
                let r = shapes[0][0];
                if shapes.iter().any(|s| s[0] != r) {
                    return Err(Error::shape(format!("concat cols {shapes:?}")));
                }
                let c: usize = shapes.iter().map(|s| s[1]).sum();
                let mut data = Vec::with_capacity(r * c);
                let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
                for i in 0..r {
                    for (v, s) in values.iter().zip(&shapes) {
                        data.extend_from_slice(&v.data()[i * s[1]..(i + 1) * s[1]]);
                    }
                }
                Tensor::new([r, c], data)?
            }
            Axis::Rows => {
                let c = shapes[0][1];
                if shapes.iter().any(|s| s[1] != c) {
                    return Err(Error::shape(format!("concat rows {shapes:?}")));
                }
                let r: usize = shapes.iter().map(|s| s[0]).sum();
                let mut data = Vec::with_capacity(r * c);
                for p in parts {
                    data.extend_from_slice(p.value().data());
                }
                Tensor::new([r, c], data)?
            }
        };
        Ok(tape.record(out, Op::Concat(parts.iter().map(|p| p.idx).collect(), axis)))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(self, axis: Axis, start: usize, end: usize) -> Result<Var<'t>> {
        let [r, c] = self.shape();
        let extent = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if start >= end || end > extent {
            return Err(Error::shape(format!("slice {start}..{end} of {extent} along {axis:?}")));
        }
        let out = slice(&self.value(), axis, start, end);
        Ok(self.tape.record(out, Op::Slice(self.idx, axis, start)))
    }

    pub fn mean(self) -> Var<'t> {
        let v = {
            let x = self.value();
            x.data().iter().sum::<f64>() / x.len() as f64
        };
        self.tape.record(Tensor::scalar(v), Op::Mean(self.idx))
    }

    pub fn sum_squares(self) -> Var<'t> {
        let v = self.value().data().iter().map(|x| x * x).sum::<f64>();
        self.tape.record(Tensor::scalar(v), Op::SumSquares(self.idx))
    }

    /// Mean squared error against `target`.
    pub fn mse(self, target: Var<'t>) -> Result<Var<'t>> {
        let n = self.value().len() as f64;
        Ok(self.sub(target)?.sum_squares().scale(1.0 / n))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
