//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Each node holds a [`Mat`]; column vectors are `n x 1`. Operations are
//! recorded at layer granularity (matmul, elementwise maps, row softmax,
//! concatenation, reductions), so a tape stays proportional to the number of
//! layer applications rather than the number of scalars.

use crate::error::{Error, Result};
use crate::numerics::functions::{log_sum_exp, sigmoid_scalar, softmax_unchecked};
use crate::numerics::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    RepeatRows(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    Gather(Var, Vec<usize>),
    VConcat(Vec<Var>),
    HConcat(Vec<Var>),
    Sum(Var),
    Dot(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

/// A recording of one forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a trainable leaf; [`Gradients::wrt`] is defined for it even
    /// when it never reaches the loss.
    pub fn param(&mut self, value: Mat) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    /// A constant copy of `v`: the value flows on, gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    /// `s * a` for a `1 x 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::Dimension("scale_by needs a 1x1 scalar".into()));
        }
        let k = self.scalar_value(s);
        let value = self.value(a).map(|x| x * k);
        Ok(self.push(value, Op::ScaleBy(a, s)))
    }

    /// Broadcasts a `c x 1` column into an `n x c` matrix with identical rows.
    pub fn repeat_rows(&mut self, column: Var, n: usize) -> Result<Var> {
        let col = self.value(column);
        if col.cols() != 1 {
            return Err(Error::Dimension("repeat_rows needs a column vector".into()));
        }
        let c = col.rows();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(col.as_slice());
        }
        let value = Mat::from_vec(n, c, data)?;
        Ok(self.push(value, Op::RepeatRows(column)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Softmax over every entry of `a` taken as one distribution.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::Dimension("softmax of an empty node".into()));
        }
        let value = Mat::from_vec(m.rows(), m.cols(), softmax_unchecked(m.as_slice()))?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = map_rows(self.value(a), softmax_unchecked)?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = map_rows(self.value(a), |row| {
            let lse = log_sum_exp(row);
            row.iter().map(|x| x - lse).collect()
        })?;
        Ok(self.push(value, Op::LogSoftmaxRows(a)))
    }

    /// Row-wise log-sum-exp, `n x c -> n x 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.cols() == 0 {
            return Err(Error::Dimension("log-sum-exp over zero columns".into()));
        }
        let value = Mat::column(m.row_iter().map(log_sum_exp).collect());
        Ok(self.push(value, Op::LogSumExpRows(a)))
    }

    /// Picks `a[i, index[i]]` per row, `n x c -> n x 1`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let m = self.value(a);
        if index.len() != m.rows() || index.iter().any(|&j| j >= m.cols()) {
            return Err(Error::Dimension(format!(
                "gather of {} indices from a {}x{} node",
                index.len(),
                m.rows(),
                m.cols()
            )));
        }
        let value = Mat::column(index.iter().enumerate().map(|(i, &j)| m.get(i, j)).collect());
        Ok(self.push(value, Op::Gather(a, index)))
    }

    /// Stacks nodes with equal column counts on top of each other.
    pub fn vconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::Dimension("vconcat of nothing".into()))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::Dimension(format!("vconcat: {} columns vs {cols}", m.cols())));
            }
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let value = Mat::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::VConcat(parts.to_vec())))
    }

    /// Places nodes with equal row counts side by side.
    pub fn hconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Dimension("hconcat of nothing".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension("hconcat: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let m = &self.nodes[p.0].value;
                value.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
                offset += m.cols();
            }
        }
        Ok(self.push(value, Op::HConcat(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).as_slice().iter().sum();
        self.push(Mat::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("dot of lengths {} and {}", x.len(), y.len())));
        }
        let value = crate::numerics::linalg::dot(x.as_slice(), y.as_slice());
        Ok(self.push(Mat::scalar(value), Op::Dot(a, b)))
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got a {r}x{c} node"
            )));
        }
        let mut adjoints: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Mat::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &grad, &mut adjoints)?;
            adjoints[idx] = Some(grad);
        }
        Ok(Gradients {
            adjoints,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, grad: &Mat, adj: &mut [Option<Mat>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = grad.matmul(&val(*b).transpose())?;
                let gb = val(*a).transpose().matmul(grad)?;
                accumulate(adj, *a, ga)?;
                accumulate(adj, *b, gb)?;
            }
            Op::Transpose(a) => accumulate(adj, *a, grad.transpose())?,
            Op::Add(a, b) => {
                accumulate(adj, *a, grad.clone())?;
                accumulate(adj, *b, grad.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, grad.clone())?;
                accumulate(adj, *b, grad.map(|g| -g))?;
            }
            Op::Mul(a, b) => {
                let ga = grad.zip_map(val(*b), |g, y| g * y)?;
                let gb = grad.zip_map(val(*a), |g, x| g * x)?;
                accumulate(adj, *a, ga)?;
                accumulate(adj, *b, gb)?;
            }
            Op::Scale(a, s) => accumulate(adj, *a, grad.map(|g| g * s))?,
            Op::ScaleBy(a, s) => {
                let k = val(*s).as_slice()[0];
                let gs = crate::numerics::linalg::dot(grad.as_slice(), val(*a).as_slice());
                accumulate(adj, *a, grad.map(|g| g * k))?;
                accumulate(adj, *s, Mat::scalar(gs))?;
            }
            Op::RepeatRows(a) => {
                let c = grad.cols();
                let mut col = vec![0.0; c];
                for row in grad.row_iter() {
                    for (acc, g) in col.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                accumulate(adj, *a, Mat::column(col))?;
            }
            Op::Tanh(a) => {
                let g = grad.zip_map(&node.value, |g, y| g * (1.0 - y * y))?;
                accumulate(adj, *a, g)?;
            }
            Op::Sigmoid(a) => {
                let g = grad.zip_map(&node.value, |g, y| g * y * (1.0 - y))?;
                accumulate(adj, *a, g)?;
            }
            Op::Exp(a) => {
                let g = grad.zip_map(&node.value, |g, y| g * y)?;
                accumulate(adj, *a, g)?;
            }
            Op::Log(a) => {
                let g = grad.zip_map(val(*a), |g, x| g / x)?;
                accumulate(adj, *a, g)?;
            }
            Op::Clamp(a, lo, hi) => {
                let g = grad.zip_map(val(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g })?;
                accumulate(adj, *a, g)?;
            }
            Op::Softmax(a) => {
                let y = node.value.as_slice();
                let inner = crate::numerics::linalg::dot(grad.as_slice(), y);
                let g = grad.zip_map(&node.value, |g, y| y * (g - inner))?;
                accumulate(adj, *a, g)?;
            }
            Op::SoftmaxRows(a) => {
                let mut g = Mat::zeros(grad.rows(), grad.cols());
                for r in 0..grad.rows() {
                    let y = node.value.row(r);
                    let gr = grad.row(r);
                    let inner = crate::numerics::linalg::dot(gr, y);
                    for (c, out) in g.row_mut(r).iter_mut().enumerate() {
                        *out = y[c] * (gr[c] - inner);
                    }
                }
                accumulate(adj, *a, g)?;
            }
            Op::LogSoftmaxRows(a) => {
                let mut g = Mat::zeros(grad.rows(), grad.cols());
                for r in 0..grad.rows() {
                    let gr = grad.row(r);
                    let total: f64 = gr.iter().sum();
                    let y = node.value.row(r);
                    for (c, out) in g.row_mut(r).iter_mut().enumerate() {
                        *out = gr[c] - y[c].exp() * total;
                    }
                }
                accumulate(adj, *a, g)?;
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let mut g = Mat::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let p = softmax_unchecked(x.row(r));
                    let gr = grad.as_slice()[r];
                    for (out, pc) in g.row_mut(r).iter_mut().zip(p) {
                        *out = gr * pc;
                    }
                }
                accumulate(adj, *a, g)?;
            }
            Op::Gather(a, index) => {
                let x = val(*a);
                let mut g = Mat::zeros(x.rows(), x.cols());
                for (i, &j) in index.iter().enumerate() {
                    g.set(i, j, grad.as_slice()[i]);
                }
                accumulate(adj, *a, g)?;
            }
            Op::VConcat(parts) => {
                let cols = grad.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    let block = grad.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(adj, p, Mat::from_vec(rows, cols, block)?)?;
                    offset += rows;
                }
            }
            Op::HConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    let mut block = Mat::zeros(grad.rows(), cols);
                    for r in 0..grad.rows() {
                        block.row_mut(r).copy_from_slice(&grad.row(r)[offset..offset + cols]);
                    }
                    accumulate(adj, p, block)?;
                    offset += cols;
                }
            }
            Op::Sum(a) => {
                let g = grad.as_slice()[0];
                let (r, c) = val(*a).shape();
                accumulate(adj, *a, Mat::filled(r, c, g))?;
            }
            Op::Dot(a, b) => {
                let g = grad.as_slice()[0];
                let ga = val(*b).map(|y| y * g);
                let gb = val(*a).map(|x| x * g);
                accumulate(adj, *a, ga)?;
                accumulate(adj, *b, gb)?;
            }
        }
        Ok(())
    }
}

fn map_rows(m: &Mat, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Mat> {
    if m.cols() == 0 {
        return Err(Error::Dimension("row softmax over zero columns".into()));
    }
    let mut data = Vec::with_capacity(m.len());
    for row in m.row_iter() {
        data.extend(f(row));
    }
    Mat::from_vec(m.rows(), m.cols(), data)
}

fn accumulate(adj: &mut [Option<Mat>], v: Var, g: Mat) -> Result<()> {
    match &mut adj[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Mat>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `d loss / d v`; zeros when `v` has no path to the loss.
    pub fn wrt(&self, v: Var) -> Mat {
        match self.adjoints.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes.get(v.0).copied().unwrap_or((0, 0));
                Mat::zeros(r, c)
            }
        }
    }
}
