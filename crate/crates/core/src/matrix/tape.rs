use super::{safe_div, Matrix};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    RowSum(Var),
    SumAll(Var),
    MeanAll(Var),
    Sqrt(Var),
    ClampNonneg(Var),
    DivSafe(Var, Var),
    AddRowBroadcast(Var, Var),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    PairwiseDistance(Var),
    Transpose(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records matrix operations in topological order for one backward pass.
///
/// Build a fresh tape per step: leaves go in through [`Tape::leaf`] (these
/// receive gradients) or [`Tape::constant`] (these never do).
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when no gradient flows into it (constants).
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input treated as a constant of differentiation.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn is_constant(&self, v: Var) -> bool {
        !self.needs(v)
    }

    fn binary(&mut self, a: Var, b: Var, value: Matrix, op: Op) -> Var {
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    fn unary(&mut self, a: Var, value: Matrix, op: Op) -> Var {
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, value, Op::MatMul(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.binary(a, b, value, Op::Hadamard(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.binary(a, b, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.binary(a, b, value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.unary(a, value, Op::Scale(a, c))
    }

    /// Adds a scalar constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.unary(a, value, Op::Offset(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).row_sum();
        self.unary(a, value, Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.unary(a, value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).mean());
        self.unary(a, value, Op::MeanAll(a))
    }

    /// Entrywise square root with the [`EPS_CLAMP`](super::EPS_CLAMP) convention.
    /// The derivative at an exact zero output is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).sqrt()?;
        Ok(self.unary(a, value, Op::Sqrt(a)))
    }

    /// `max(x, 0)` for entries known to be nonnegative up to rounding `tol`.
    pub fn clamp_nonneg(&mut self, a: Var, tol: f64) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = x.as_slice().iter().find(|&&v| v < -tol || v.is_nan()) {
            return Err(Error::NumericDomain(format!(
                "entry {bad} below clamp tolerance {tol}"
            )));
        }
        let value = x.map(|v| v.max(0.0));
        Ok(self.unary(a, value, Op::ClampNonneg(a)))
    }

    /// Entrywise `a / b` with zero denominators yielding zero (and zero gradient).
    pub fn divide_safe(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).divide_safe(self.value(b))?;
        Ok(self.binary(a, b, value, Op::DivSafe(a, b)))
    }

    /// `x + 1·bᵀ`: adds the row vector `b` to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim("add_row_broadcast", xv.shape(), bv.shape()));
        }
        let value = Matrix::from_fn(xv.rows(), xv.cols(), |i, j| xv.get(i, j) + bv.get(0, j));
        Ok(self.binary(x, b, value, Op::AddRowBroadcast(x, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.unary(a, value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.unary(a, value, Op::Tanh(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.unary(a, value, Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for i in 0..x.rows() {
            let row = x.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..x.cols() {
                value.set(i, j, row[j] - lse);
            }
        }
        self.unary(a, value, Op::LogSoftmax(a))
    }

    /// Euclidean distance matrix between the rows of `points`.
    pub fn pairwise_distance(&mut self, points: Var) -> Var {
        let value = crate::dependence::euclidean_distances(self.value(points));
        self.unary(points, value, Op::PairwiseDistance(points))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.unary(a, value, Op::Transpose(a))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |v: Var, contrib: Matrix| -> Result<()> {
            if !self.needs(v) {
                return Ok(());
            }
            let slot = &mut grads[v.0];
            match slot {
                Some(existing) => {
                    for (e, c) in existing.as_mut_slice().iter_mut().zip(contrib.as_slice()) {
                        *e += c;
                    }
                }
                None => *slot = Some(contrib),
            }
            Ok(())
        };
        let out = &node.value;
        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    acc(a, g.matmul(&self.value(b).transpose())?)?;
                }
                if self.needs(b) {
                    acc(b, self.value(a).transpose().matmul(g)?)?;
                }
            }
            Op::Hadamard(a, b) => {
                if self.needs(a) {
                    acc(a, g.hadamard(self.value(b))?)?;
                }
                if self.needs(b) {
                    acc(b, g.hadamard(self.value(a))?)?;
                }
            }
            Op::Add(a, b) => {
                acc(a, g.clone())?;
                acc(b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(a, g.clone())?;
                acc(b, g.scale(-1.0))?;
            }
            Op::Scale(a, c) => acc(a, g.scale(c))?,
            Op::Offset(a) => acc(a, g.clone())?,
            Op::RowSum(a) => {
                let x = self.value(a);
                acc(a, Matrix::from_fn(x.rows(), x.cols(), |i, _| g.get(i, 0)))?;
            }
            Op::SumAll(a) => {
                let x = self.value(a);
                acc(a, Matrix::filled(x.rows(), x.cols(), g.get(0, 0)))?;
            }
            Op::MeanAll(a) => {
                let x = self.value(a);
                let n = x.len().max(1) as f64;
                acc(a, Matrix::filled(x.rows(), x.cols(), g.get(0, 0) / n))?;
            }
            Op::Sqrt(a) => {
                acc(a, g.zip_with(out, "sqrt", |gi, s| if s > 0.0 { gi / (2.0 * s) } else { 0.0 })?)?;
            }
            Op::ClampNonneg(a) => {
                acc(a, g.zip_with(out, "clamp", |gi, s| if s > 0.0 { gi } else { 0.0 })?)?;
            }
            Op::DivSafe(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.needs(a) {
                    acc(a, g.zip_with(bv, "divide_safe", safe_div)?)?;
                }
                if self.needs(b) {
                    let q = av.zip_with(bv, "divide_safe", |x, y| safe_div(x, y * y))?;
                    acc(b, g.zip_with(&q, "divide_safe", |gi, qi| -gi * qi)?)?;
                }
            }
            Op::AddRowBroadcast(x, b) => {
                acc(x, g.clone())?;
                if self.needs(b) {
                    acc(b, g.col_sum())?;
                }
            }
            Op::Relu(a) => {
                acc(a, g.zip_with(self.value(a), "relu", |gi, x| if x > 0.0 { gi } else { 0.0 })?)?;
            }
            Op::Tanh(a) => acc(a, g.zip_with(out, "tanh", |gi, t| gi * (1.0 - t * t))?)?,
            Op::Softmax(a) => {
                let mut dx = out.clone();
                for i in 0..out.rows() {
                    let dot: f64 = g.row(i).iter().zip(out.row(i)).map(|(gi, s)| gi * s).sum();
                    for j in 0..out.cols() {
                        dx.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                acc(a, dx)?;
            }
            Op::LogSoftmax(a) => {
                let mut dx = g.clone();
                for i in 0..out.rows() {
                    let gsum: f64 = g.row(i).iter().sum();
                    for j in 0..out.cols() {
                        dx.set(i, j, g.get(i, j) - out.get(i, j).exp() * gsum);
                    }
                }
                acc(a, dx)?;
            }
            Op::PairwiseDistance(p) => {
                let pts = self.value(p);
                let (n, d) = pts.shape();
                let mut dp = Matrix::zeros(n, d);
                for i in 0..n {
                    for j in 0..n {
                        let dist = out.get(i, j);
                        // coincident points: subgradient 0
                        if i == j || dist == 0.0 {
                            continue;
                        }
                        let coef = (g.get(i, j) + g.get(j, i)) / dist;
                        for k in 0..d {
                            let v = dp.get(i, k) + coef * (pts.get(i, k) - pts.get(j, k));
                            dp.set(i, k, v);
                        }
                    }
                }
                acc(p, dp)?;
            }
            Op::Transpose(a) => acc(a, g.transpose())?,
        }
        Ok(())
    }
}

pub(crate) fn softmax_rows(x: &Matrix) -> Matrix {
    let mut value = x.clone();
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (j, e) in exps.into_iter().enumerate() {
            value.set(i, j, e / total);
        }
    }
    value
}
