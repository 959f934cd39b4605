//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value and the information its backward rule
//! needs; [`Graph::backward`] then walks the tape once in reverse.
//!
//! All operands are viewed as row-major matrices: rank-2 tensors as
//! `[rows, cols]`, rank-1 tensors as a single row.

use matrixmultiply::dgemm;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    WeightedSum(Vec<(Var, f64)>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-feature batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Recording tape for one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    /// New tape; non-finite outputs are flagged after every op in debug builds.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(op, self.dims(a), self.dims(b)));
        }
        Ok(())
    }

    /// `x·w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        let wd = self.dims(w).to_vec();
        if xd.len() != 2 || wd.len() != 2 || xd[1] != wd[0] {
            return Err(Error::shape("linear", &xd, &wd));
        }
        let (m, k, n) = (xd[0], xd[1], wd[1]);
        if let Some(b) = b {
            if self.value(b).len() != n {
                return Err(Error::shape("linear bias", &wd, self.dims(b)));
            }
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.vals(x), Layout::Normal, self.vals(w), Layout::Normal, &mut out, 0.0);
        if let Some(b) = b {
            let bias = self.vals(b);
            for row in out.chunks_exact_mut(n) {
                for (o, bb) in row.iter_mut().zip(bias) {
                    *o += bb;
                }
            }
        }
        let needs = self.requires_grad(x) || self.requires_grad(w) || b.is_some_and(|b| self.requires_grad(b));
        self.push("linear", Tensor::from_parts(vec![m, n], out), Op::Linear { x, w, b }, needs)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_dims(name, a, b)?;
        let values = self.vals(a).iter().zip(self.vals(b)).map(|(&x, &y)| f(x, y)).collect();
        let needs = self.requires_grad(a) || self.requires_grad(b);
        let dims = self.dims(a).to_vec();
        self.push(name, Tensor::from_parts(dims, values), op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise product with a constant array (dropout masks, row masks).
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        if factor.len() != self.value(a).len() {
            return Err(Error::shape("mul_const", self.dims(a), &[factor.len()]));
        }
        let values = self.vals(a).iter().zip(&factor).map(|(x, f)| x * f).collect();
        let dims = self.dims(a).to_vec();
        let needs = self.requires_grad(a);
        self.push("mul_const", Tensor::from_parts(dims, values), Op::MulConst(a, factor), needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.weighted_sum(&[(a, c)])
    }

    /// `Σ cᵢ·xᵢ`, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, c0) = *terms.first().ok_or(Error::EmptySequence)?;
        let dims = self.dims(first).to_vec();
        let mut out: Vec<f64> = self.vals(first).iter().map(|v| c0 * v).collect();
        for &(v, c) in &terms[1..] {
            if self.dims(v) != dims.as_slice() {
                return Err(Error::shape("weighted_sum", &dims, self.dims(v)));
            }
            for (o, x) in out.iter_mut().zip(self.vals(v)) {
                *o += c * x;
            }
        }
        let needs = terms.iter().any(|&(v, _)| self.requires_grad(v));
        self.push("weighted_sum", Tensor::from_parts(dims, out), Op::WeightedSum(terms.to_vec()), needs)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let values = self.vals(a).iter().map(|&x| f(x)).collect();
        let dims = self.dims(a).to_vec();
        let needs = self.requires_grad(a);
        self.push(name, Tensor::from_parts(dims, values), op, needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map("abs", a, Op::Abs(a), f64::abs)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if len == 0 || start + len > cols {
            return Err(Error::shape("slice_cols", t.dims(), &[start, len]));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.values()[r * cols + start..r * cols + start + len]);
        }
        let needs = self.requires_grad(x);
        self.push("slice_cols", Tensor::from_parts(vec![rows, len], out), Op::SliceCols { x, start }, needs)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptySequence)?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape("concat_rows", self.dims(first), t.dims()));
            }
            rows += t.rows();
            out.extend_from_slice(t.values());
        }
        let needs = parts.iter().any(|&p| self.requires_grad(p));
        self.push("concat_rows", Tensor::from_parts(vec![rows, cols], out), Op::ConcatRows(parts.to_vec()), needs)
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if len == 0 || start + len > rows {
            return Err(Error::shape("slice_rows", t.dims(), &[start, len]));
        }
        let out = t.values()[start * cols..(start + len) * cols].to_vec();
        let needs = self.requires_grad(x);
        self.push("slice_rows", Tensor::from_parts(vec![len, cols], out), Op::SliceRows { x, start }, needs)
    }

    /// Per-column standardization followed by `gamma·x̂ + beta`.
    ///
    /// With `stats = None` the batch's own mean and biased variance are used
    /// (and returned); otherwise the given running statistics are applied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<&BatchStats>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(Error::shape("batch_norm", t.dims(), self.dims(gamma)));
        }
        let xs = t.values();
        let (mean, var, batch_stats) = match stats {
            Some(s) => {
                if s.mean.len() != cols || s.var.len() != cols {
                    return Err(Error::shape("batch_norm stats", t.dims(), &[s.mean.len()]));
                }
                (s.mean.clone(), s.var.clone(), false)
            }
            None => {
                if rows < 2 {
                    return Err(Error::BatchStatistics(rows));
                }
                let mut mean = vec![0.0; cols];
                for row in xs.chunks_exact(cols) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; cols];
                for row in xs.chunks_exact(cols) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xs.len());
        for row in xs.chunks_exact(cols) {
            for j in 0..cols {
                xhat.push((row[j] - mean[j]) * inv_std[j]);
            }
        }
        let (g, b) = (self.vals(gamma), self.vals(beta));
        let out = xhat.iter().enumerate().map(|(i, &h)| g[i % cols] * h + b[i % cols]).collect();
        let needs = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        let dims = self.dims(x).to_vec();
        let observed = batch_stats.then(|| BatchStats { mean, var });
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        };
        let v = self.push("batch_norm", Tensor::from_parts(dims, out), op, needs)?;
        Ok((v, observed))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.vals(a).iter().sum();
        let needs = self.requires_grad(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Returns gradients for every leaf; leaves the loss does not depend on
    /// get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Rank(lt.dims().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        let dims = self.nodes.iter().map(|n| n.value.dims().to_vec()).collect();
        Ok(Gradients { grads, dims })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let y = node.value.values();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (m, k) = (self.value(*x).rows(), self.value(*x).cols());
                let n = self.value(*w).cols();
                acc(*x, &mut |dx| gemm(m, n, k, g, Layout::Normal, self.vals(*w), Layout::Transposed, dx, 1.0));
                acc(*w, &mut |dw| gemm(k, m, n, self.vals(*x), Layout::Transposed, g, Layout::Normal, dw, 1.0));
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for row in g.chunks_exact(n) {
                            for (d, gg) in db.iter_mut().zip(row) {
                                *d += gg;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                acc(*a, &mut |d| {
                    for ((d, g), bb) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * bb;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), aa) in d.iter_mut().zip(g).zip(av) {
                        *d += g * aa;
                    }
                });
            }
            Op::MulConst(a, factor) => acc(*a, &mut |d| {
                for ((d, g), f) in d.iter_mut().zip(g).zip(factor) {
                    *d += g * f;
                }
            }),
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
                }
            }
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => acc(*a, &mut |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    if *y > 0.0 {
                        *d += g;
                    }
                }
            }),
            Op::Abs(a) => {
                let xv = self.vals(*a);
                acc(*a, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(xv) {
                        if *x > 0.0 {
                            *d += g;
                        } else if *x < 0.0 {
                            *d -= g;
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let len = node.value.cols();
                acc(*x, &mut |d| {
                    for (r, grow) in g.chunks_exact(len).enumerate() {
                        add_into(&mut d[r * cols + start..r * cols + start + len], grow);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |d| add_into(d, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.value(*x).cols();
                acc(*x, &mut |d| add_into(&mut d[start * cols..start * cols + g.len()], g));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let cols = inv_std.len();
                let rows = g.len() / cols;
                let gam = self.vals(*gamma);
                let mut sum_g = vec![0.0; cols];
                let mut sum_gx = vec![0.0; cols];
                for (gr, hr) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                    for j in 0..cols {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * hr[j];
                    }
                }
                acc(*beta, &mut |d| add_into(d, &sum_g));
                acc(*gamma, &mut |d| add_into(d, &sum_gx));
                acc(*x, &mut |d| {
                    let n = rows as f64;
                    for (i, dd) in d.iter_mut().enumerate() {
                        let j = i % cols;
                        let scale = gam[j] * inv_std[j];
                        if *batch_stats {
                            // d/dx of the batch-standardized output, statistics included.
                            *dd += scale * (g[i] - sum_g[j] / n - xhat[i] * sum_gx[j] / n);
                        } else {
                            *dd += scale * g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    dims: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(self.dims[v.0].clone(), g.clone()),
            None => Tensor::zeros(self.dims[v.0].clone()),
        }
    }

    /// Moves the gradient out, or zeros of `len` when absent.
    pub fn take(&mut self, v: Var) -> Vec<f64> {
        let len = self.dims[v.0].iter().product();
        self.grads[v.0].take().unwrap_or_else(|| vec![0.0; len])
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[derive(Clone, Copy)]
enum Layout {
    Normal,
    Transposed,
}

/// `c = a·b + beta·c` where `a` is stored `m×k` (or `k×m` when transposed)
/// and `b` is `k×n` (or `n×k`).
fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = match la {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: slice lengths are checked above against the m/k/n extents and
    // the strides address exactly those elements.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
