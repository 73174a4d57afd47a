//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward pass. Inputs always precede outputs, so a single reverse sweep
//! over the node list visits each node exactly once in topological order.

use std::f64::consts::PI;

use rand::Rng;

use super::tensor::{dims2, matmul_into, matmul_nt_acc, matmul_tn_acc, softmax_in_place};
use super::{NumError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Attention mask used by [`Tape::softmax_rows`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    None,
    /// Row `i` may only attend to columns `j <= i`.
    Causal,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    MatmulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Square(Var),
    SumAll(Var),
    SumCols(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    Dropout { x: Var, mask: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    InterleaveRows(Var, Var),
    SegmentSums { x: Var, ranges: Vec<(usize, usize)> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if the loss depends on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    /// A differentiable input (parameter or probe).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(Op::Leaf, value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var], name: &'static str) -> Result<Var, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(op, value, requires_grad))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumError {
        NumError::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Op::Matmul(a, b), Tensor::from_parts(vec![m, n], out), &[a, b], "matmul")
    }

    /// `a * b^T` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = dims2(self.value(a), "matmul_nt")?;
        let (n, k2) = dims2(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Op::MatmulNt(a, b), Tensor::from_parts(vec![m, n], out), &[a, b], "matmul_nt")
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch(name, a, b));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        self.push(op, value, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_same(a, b, "minimum", Op::Minimum(a, b), f64::min)
    }

    fn row_broadcast(
        &mut self,
        a: Var,
        row: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let n = self.value(a).cols();
        if self.value(row).len() != n {
            return Err(self.mismatch(name, a, row));
        }
        let r = self.value(row).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &x)| f(x, r[i % n])).collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        self.push(op, value, &[a, row], name)
    }

    /// Adds a length-`n` row to every row of `a: [m,n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumError> {
        self.row_broadcast(a, row, "add_row", Op::AddRow(a, row), |x, y| x + y)
    }

    /// Multiplies every row of `a: [m,n]` elementwise by a length-`n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumError> {
        self.row_broadcast(a, row, "mul_row", Op::MulRow(a, row), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, NumError> {
        let value = self.value(a).map(f);
        self.push(op, value, &[a], name)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.unary(a, "scale", Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.unary(a, "add_scalar", Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, "relu", Op::Relu(a), |x| x.max(0.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, "gelu", Op::Gelu(a), gelu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, "tanh", Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, "exp", Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, "ln", Op::Ln(a), f64::ln)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumError> {
        self.unary(a, "clamp", Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, "square", Op::Square(a), |x| x * x)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(Op::Reshape(a), value, &[a], "reshape")
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), value, &[a], "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, NumError> {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Row sums of `a: [m,n]`, giving `[m,1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, NumError> {
        let (m, n) = dims2(self.value(a), "sum_cols")?;
        let data = (0..m).map(|i| self.value(a).data()[i * n..(i + 1) * n].iter().sum()).collect();
        self.push(Op::SumCols(a), Tensor::from_parts(vec![m, 1], data), &[a], "sum_cols")
    }

    /// Per-row standardization (no affine): zero mean, unit population variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var, NumError> {
        let (m, n) = dims2(self.value(a), "layer_norm")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(Op::LayerNorm { x: a, inv_std }, Tensor::from_parts(vec![m, n], out), &[a], "layer_norm")
    }

    /// Row-wise softmax of `a: [m,n]` with an optional causal mask.
    pub fn softmax_rows(&mut self, a: Var, mask: Mask) -> Result<Var, NumError> {
        let (m, n) = dims2(self.value(a), "softmax_rows")?;
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            if mask == Mask::Causal {
                for v in row.iter_mut().skip(i + 1) {
                    *v = f64::NEG_INFINITY;
                }
            }
            softmax_in_place(row);
        }
        self.push(Op::Softmax(a), Tensor::from_parts(vec![m, n], out), &[a], "softmax_rows")
    }

    /// Inverted dropout. A zero rate returns `a` unchanged without recording a node.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var, NumError> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        self.push(Op::Dropout { x: a, mask }, value, &[a], "dropout")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = dims2(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(vec![m, total], out), parts, "concat_cols")
    }

    /// Columns `start..end` of `a: [m,n]`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let (m, n) = dims2(self.value(a), "slice_cols")?;
        if start >= end || end > n {
            return Err(NumError::OutOfRange { op: "slice_cols", index: end, len: n });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&self.value(a).data()[i * n + start..i * n + end]);
        }
        self.push(Op::SliceCols { x: a, start }, Tensor::from_parts(vec![m, w], out), &[a], "slice_cols")
    }

    /// Rows of `a` selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, NumError> {
        let (m, n) = dims2(self.value(a), "gather_rows")?;
        let mut out = Vec::with_capacity(index.len() * n);
        for &r in index {
            if r >= m {
                return Err(NumError::OutOfRange { op: "gather_rows", index: r, len: m });
            }
            out.extend_from_slice(self.value(a).row(r));
        }
        let value = Tensor::from_parts(vec![index.len(), n], out);
        self.push(Op::GatherRows { x: a, index: index.to_vec() }, value, &[a], "gather_rows")
    }

    /// `[a0, b0, a1, b1, ...]` for two `[m,n]` inputs, giving `[2m,n]`.
    pub fn interleave_rows(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, n) = dims2(self.value(a), "interleave_rows")?;
        if self.value(b).shape() != [m, n] {
            return Err(self.mismatch("interleave_rows", a, b));
        }
        let mut out = Vec::with_capacity(2 * m * n);
        for i in 0..m {
            out.extend_from_slice(self.value(a).row(i));
            out.extend_from_slice(self.value(b).row(i));
        }
        self.push(Op::InterleaveRows(a, b), Tensor::from_parts(vec![2 * m, n], out), &[a, b], "interleave_rows")
    }

    /// Sums of the flat entries of `a` over half-open index ranges, giving `[k]`.
    pub fn segment_sums(&mut self, a: Var, ranges: &[(usize, usize)]) -> Result<Var, NumError> {
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(ranges.len());
        for &(s, e) in ranges {
            if s >= e || e > x.len() {
                return Err(NumError::OutOfRange { op: "segment_sums", index: e, len: x.len() });
            }
            out.push(x[s..e].iter().sum());
        }
        if out.is_empty() {
            return Err(NumError::InvalidShape { shape: vec![0] });
        }
        let k = out.len();
        self.push(
            Op::SegmentSums { x: a, ranges: ranges.to_vec() },
            Tensor::from_parts(vec![k], out),
            &[a],
            "segment_sums",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| matmul_nt_acc(g, bv, ga, m, n, k));
                self.acc(grads, *b, |gb| matmul_tn_acc(av, g, gb, m, k, n));
            }
            Op::MatmulNt(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = G B, dB = G^T A
                self.acc(grads, *a, |ga| {
                    let mut tmp = vec![0.0; m * k];
                    matmul_into(g, bv, &mut tmp, m, n, k);
                    add_into(ga, &tmp);
                });
                self.acc(grads, *b, |gb| matmul_tn_acc(g, av, gb, m, n, k));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| (0..g.len()).for_each(|i| ga[i] += g[i] * bv[i]));
                self.acc(grads, *b, |gb| (0..g.len()).for_each(|i| gb[i] += g[i] * av[i]));
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| (0..g.len()).filter(|&i| av[i] <= bv[i]).for_each(|i| ga[i] += g[i]));
                self.acc(grads, *b, |gb| (0..g.len()).filter(|&i| av[i] > bv[i]).for_each(|i| gb[i] += g[i]));
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).len();
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *row, |gr| g.iter().enumerate().for_each(|(i, v)| gr[i % n] += v));
            }
            Op::MulRow(a, row) => {
                let n = self.value(*row).len();
                let (av, rv) = (self.value(*a).data(), self.value(*row).data());
                self.acc(grads, *a, |ga| (0..g.len()).for_each(|i| ga[i] += g[i] * rv[i % n]));
                self.acc(grads, *row, |gr| (0..g.len()).for_each(|i| gr[i % n] += g[i] * av[i]));
            }
            Op::Scale(a, c) => self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += c * v)),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |ga| (0..g.len()).filter(|&i| x[i] > 0.0).for_each(|i| ga[i] += g[i]));
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |ga| (0..g.len()).for_each(|i| ga[i] += g[i] * gelu_grad(x[i])));
            }
            Op::Tanh(a) => self.acc(grads, *a, |ga| (0..g.len()).for_each(|i| ga[i] += g[i] * (1.0 - y[i] * y[i]))),
            Op::Exp(a) => self.acc(grads, *a, |ga| (0..g.len()).for_each(|i| ga[i] += g[i] * y[i])),
            Op::Ln(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |ga| (0..g.len()).for_each(|i| ga[i] += g[i] / x[i]));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    (0..g.len()).filter(|&i| x[i] >= *lo && x[i] <= *hi).for_each(|i| ga[i] += g[i])
                });
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |ga| (0..g.len()).for_each(|i| ga[i] += 2.0 * x[i] * g[i]));
            }
            Op::SumAll(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::SumCols(a) => {
                let n = self.value(*a).cols();
                self.acc(grads, *a, |ga| ga.iter_mut().enumerate().for_each(|(i, o)| *o += g[i / n]));
            }
            Op::LayerNorm { x, inv_std } => {
                let n = self.value(*x).cols();
                self.acc(grads, *x, |gx| {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gy = &g[r * n..(r + 1) * n];
                        let xh = &y[r * n..(r + 1) * n];
                        let mean_g = gy.iter().sum::<f64>() / n as f64;
                        let mean_gx = gy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[r * n + j] += inv * (gy[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let n = self.value(*a).cols();
                self.acc(grads, *a, |ga| {
                    for r in 0..y.len() / n {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            ga[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.acc(grads, *x, |gx| (0..g.len()).for_each(|i| gx[i] += g[i] * mask[i]));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, |gp| {
                        for r in 0..gp.len() / w {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let w = node.value.cols();
                self.acc(grads, *x, |gx| {
                    for r in 0..g.len() / w {
                        for j in 0..w {
                            gx[r * n + start + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::GatherRows { x, index } => {
                let n = self.value(*x).cols();
                self.acc(grads, *x, |gx| {
                    for (k, &r) in index.iter().enumerate() {
                        for j in 0..n {
                            gx[r * n + j] += g[k * n + j];
                        }
                    }
                });
            }
            Op::InterleaveRows(a, b) => {
                let n = self.value(*a).cols();
                self.acc(grads, *a, |ga| {
                    for r in 0..ga.len() / n {
                        add_into(&mut ga[r * n..(r + 1) * n], &g[2 * r * n..(2 * r + 1) * n]);
                    }
                });
                self.acc(grads, *b, |gb| {
                    for r in 0..gb.len() / n {
                        add_into(&mut gb[r * n..(r + 1) * n], &g[(2 * r + 1) * n..(2 * r + 2) * n]);
                    }
                });
            }
            Op::SegmentSums { x, ranges } => {
                self.acc(grads, *x, |gx| {
                    for (k, &(s, e)) in ranges.iter().enumerate() {
                        gx[s..e].iter_mut().for_each(|o| *o += g[k]);
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let len = self.nodes[var.0].value.len();
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = k * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
