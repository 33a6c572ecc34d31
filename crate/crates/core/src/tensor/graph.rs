use std::sync::Arc;

use super::{row_cosine, Matrix, SparseMatrix, TensorError, ZERO_NORM_EPS};

/// Handle to a node recorded on a [`CompGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward value is computed by the caller and whose
/// local gradient rule is supplied through this trait.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (or `None` when an input receives none).
    fn backward(
        &self,
        inputs: &[&Matrix],
        output: &Matrix,
        grad_output: &Matrix,
    ) -> Result<Vec<Option<Matrix>>, TensorError>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Sub { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Relu(Var),
    Exp(Var),
    Log(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Norm(Var),
    CosineRows(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    ConcatCols(Vec<Var>),
    ScaleRows { h: Var, w: Var },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations in topological order.
///
/// Every operation is appended after its inputs, so a single reverse sweep
/// visits each node once.
#[derive(Default)]
pub struct CompGraph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`CompGraph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl CompGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn broadcast_kind(&self, a: Var, b: Var, op: &'static str) -> Result<bool, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Ok(true)
        } else {
            Err(TensorError::Shape { op, lhs: sa, rhs: sb })
        }
    }

    fn binary(&self, a: Var, b: Var, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        if broadcast {
            let brow = vb.row(0);
            Matrix::from_fn(va.rows(), va.cols(), |i, j| f(va.get(i, j), brow[j]))
        } else {
            va.zip_map(vb, f).expect("shapes checked")
        }
    }

    /// `a + b`; `b` may be a `1 x cols` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let broadcast = self.broadcast_kind(a, b, "add")?;
        let value = self.binary(a, b, broadcast, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b, broadcast }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let broadcast = self.broadcast_kind(a, b, "sub")?;
        let value = self.binary(a, b, broadcast, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub { a, b, broadcast }, rg))
    }

    /// Elementwise product; `b` may be a broadcast row.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let broadcast = self.broadcast_kind(a, b, "mul")?;
        let value = self.binary(a, b, broadcast, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b, broadcast }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let va = self.value(a);
        if let Some(bad) = va.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::Domain { op: "log", detail: format!("non-positive input {bad}") });
        }
        let value = va.map(f64::ln);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Log(a), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Sum of all entries, as a 1x1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = Matrix::scalar(va.sum() / va.len() as f64);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Abs(a), rg)
    }

    /// Euclidean (Frobenius) norm as a 1x1 matrix.
    pub fn norm(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).frobenius_norm());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Norm(a), rg)
    }

    /// Row-wise cosine similarity, `n x 1`. Zero-norm rows give 0.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = super::cosine_rows(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::CosineRows(a, b), rg))
    }

    /// Sparse-times-dense product. The sparse operand is a constant.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, x: Var) -> Result<Var, TensorError> {
        let value = s.matmul_dense(self.value(x))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SpMM(s, x), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = parts.first().map_or(0, |&v| self.shape(v).0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(TensorError::Shape { op: "concat_cols", lhs: self.shape(parts[0]), rhs: self.shape(p) });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Scales row `i` of `h` by `w[i]`, where `w` is an `n x 1` column.
    pub fn scale_rows(&mut self, h: Var, w: Var) -> Result<Var, TensorError> {
        let (sh, sw) = (self.shape(h), self.shape(w));
        if sw != (sh.0, 1) {
            return Err(TensorError::Shape { op: "scale_rows", lhs: sh, rhs: sw });
        }
        let (vh, vw) = (self.value(h), self.value(w));
        let value = Matrix::from_fn(sh.0, sh.1, |i, j| vh.get(i, j) * vw.get(i, 0));
        let rg = self.any_grad(&[h, w]);
        Ok(self.push(value, Op::ScaleRows { h, w }, rg))
    }

    /// Mean softmax cross-entropy of `logits` rows against class `targets`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let vl = self.value(logits);
        if vl.rows() != targets.len() || vl.rows() == 0 {
            return Err(TensorError::Contract(format!("{} targets for {} logit rows", targets.len(), vl.rows())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= vl.cols()) {
            return Err(TensorError::Contract(format!("target {t} outside {} classes", vl.cols())));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = vl.row(i);
            total += log_sum_exp(row) - row[t];
        }
        let value = Matrix::scalar(total / targets.len() as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec() }, rg))
    }

    /// Records an operation whose forward `value` the caller already computed.
    pub fn custom(&mut self, inputs: &[Var], value: Matrix, op: Box<dyn CustomOp>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// Reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, TensorError> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(TensorError::Contract("loss is not on this graph".into()));
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            let (r, c) = self.nodes[loss.0].value.shape();
            return Err(TensorError::Contract(format!("backward needs a scalar loss, found {r}x{c}")));
        }
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<(), TensorError> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, m: Matrix| -> Result<(), TensorError> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => {
                    *slot = Some(m);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    super::gemm(1.0, g, false, vb, true, 0.0, &mut ga);
                    acc(*a, ga)?;
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                    super::gemm(1.0, va, true, g, false, 0.0, &mut gb);
                    acc(*b, gb)?;
                }
            }
            Op::Add { a, b, broadcast } => {
                acc(*a, g.clone())?;
                acc(*b, if *broadcast { g.column_sums() } else { g.clone() })?;
            }
            Op::Sub { a, b, broadcast } => {
                acc(*a, g.clone())?;
                let mut gb = if *broadcast { g.column_sums() } else { g.clone() };
                gb.scale_in_place(-1.0);
                acc(*b, gb)?;
            }
            Op::Mul { a, b, broadcast } => {
                let (va, vb) = (val(*a), val(*b));
                if *broadcast {
                    let brow = vb.row(0);
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * brow[j]);
                    acc(*a, ga)?;
                    acc(*b, g.zip_map(va, |x, y| x * y)?.column_sums())?;
                } else {
                    acc(*a, g.zip_map(vb, |x, y| x * y)?)?;
                    acc(*b, g.zip_map(va, |x, y| x * y)?)?;
                }
            }
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?)?,
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y)?)?,
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv / x)?)?,
            Op::Scale(a, f) => acc(*a, g.map(|gv| gv * f))?,
            Op::AddScalar(a) => acc(*a, g.clone())?,
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?)?,
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0)))?;
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64))?;
            }
            Op::Abs(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv * sign(x))?)?,
            Op::Norm(a) => {
                let norm = node.value.get(0, 0);
                let gv = g.get(0, 0);
                let ga = if norm > 0.0 { val(*a).map(|x| gv * x / norm) } else { val(*a).map(|_| 0.0) };
                acc(*a, ga)?;
            }
            Op::CosineRows(a, b) => {
                let (ga, gb) = cosine_rows_backward(val(*a), val(*b), g);
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::SpMM(s, x) => acc(*x, s.transpose_matmul_dense(g)?)?,
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    let gp = Matrix::from_fn(g.rows(), cols, |i, j| g.get(i, offset + j));
                    offset += cols;
                    acc(p, gp)?;
                }
            }
            Op::ScaleRows { h, w } => {
                let (vh, vw) = (val(*h), val(*w));
                let gh = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * vw.get(i, 0));
                let gw = Matrix::from_fn(vh.rows(), 1, |i, _| g.row(i).iter().zip(vh.row(i)).map(|(x, y)| x * y).sum());
                acc(*h, gh)?;
                acc(*w, gw)?;
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let vl = val(*logits);
                let scale = g.get(0, 0) / targets.len() as f64;
                let mut gl = Matrix::zeros(vl.rows(), vl.cols());
                for (i, &t) in targets.iter().enumerate() {
                    let row = vl.row(i);
                    let lse = log_sum_exp(row);
                    for (j, o) in gl.row_mut(i).iter_mut().enumerate() {
                        let p = (row[j] - lse).exp();
                        *o = scale * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
                acc(*logits, gl)?;
            }
            Op::Custom { inputs, op } => {
                let in_vals: Vec<&Matrix> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.backward(&in_vals, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(TensorError::Contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (&v, gv) in inputs.iter().zip(gs) {
                    if let Some(gv) = gv {
                        if gv.shape() != val(v).shape() {
                            return Err(TensorError::Shape { op: op.name(), lhs: gv.shape(), rhs: val(v).shape() });
                        }
                        acc(v, gv)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn cosine_rows_backward(a: &Matrix, b: &Matrix, g: &Matrix) -> (Matrix, Matrix) {
    let (n, d) = a.shape();
    let mut ga = Matrix::zeros(n, d);
    let mut gb = Matrix::zeros(n, d);
    for i in 0..n {
        let (ra, rb) = (a.row(i), b.row(i));
        let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
            continue;
        }
        let c = row_cosine(ra, rb);
        let gi = g.get(i, 0);
        for j in 0..d {
            ga.set(i, j, gi * (rb[j] / (na * nb) - c * ra[j] / (na * na)));
            gb.set(i, j, gi * (ra[j] / (na * nb) - c * rb[j] / (nb * nb)));
        }
    }
    (ga, gb)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Logistic function, kept inside the open unit interval: the result is
/// clamped to `[MIN_POSITIVE, 1 - 2^-53]` where f64 rounding would reach 0 or 1.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
