//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a growing graph; a backward pass does not
//! write raw adjoint buffers but instead *records the adjoint computation
//! as new graph nodes*. Gradients are therefore ordinary graph values and
//! can be differentiated again, which is what the weight-leakage attacks
//! need: their objective is a function of the gradient of the model loss,
//! and the adversary optimizes that objective by a second backward pass.
//!
//! Each graph is confined to one attack trial; tensors crossing trials are
//! plain immutable values.

mod kernels;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::TensorBase;

pub use kernels::conv_out_extent;

/// Denominator floor for divisions by norms.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How a node was produced. Payload fields are node indices.
#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    AddConst(usize, F),
    MulConst(usize, F),
    /// 1 / (x + eps), elementwise.
    Recip(usize, F),
    Sqrt(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Relu(usize),
    Sigmoid(usize),
    /// Full reduction to a 0-dim scalar.
    Sum(usize),
    /// Scalar replicated to the node's own shape.
    Broadcast(usize),
    /// [B,C] -> [B], summing each row.
    RowSum(usize),
    /// [B] -> [B,C], replicating along columns.
    RowBroadcast(usize),
    /// [B,C] -> [C], summing each column.
    ColSum(usize),
    /// [C] -> [B,C], replicating along rows.
    ColBroadcast(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Conv2d { x: usize, k: usize, pad: usize, stride: usize },
    ConvGradInput { g: usize, k: usize, pad: usize, stride: usize },
    ConvGradKernel { x: usize, g: usize, pad: usize, stride: usize },
    DiffRows(usize),
    DiffRowsAdjoint(usize),
    DiffCols(usize),
    DiffColsAdjoint(usize),
}

struct Node<F> {
    value: TensorBase<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to a list of variables.
pub struct GradResultBase<F> {
    grads: Vec<TensorBase<F>>,
    vars: Option<Vec<Var>>,
}

impl<F: Scalar> GradResultBase<F> {
    pub fn grads(&self) -> &[TensorBase<F>] {
        &self.grads
    }

    pub fn into_grads(self) -> Vec<TensorBase<F>> {
        self.grads
    }

    pub fn grad(&self, i: usize) -> &TensorBase<F> {
        &self.grads[i]
    }

    /// True when the backward computation was kept on the graph, so the
    /// returned variables can be differentiated again.
    pub fn graph_retained(&self) -> bool {
        self.vars.is_some()
    }

    /// Graph handles for the gradients; present only with `retain_graph`.
    pub fn vars(&self) -> Option<&[Var]> {
        self.vars.as_deref()
    }
}

/// Recording graph. All operations validate shapes and append one node.
pub struct GraphBase<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for GraphBase<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> GraphBase<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: TensorBase<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Introduce a new independent value.
    pub fn leaf(&mut self, value: TensorBase<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: TensorBase<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, value: F) -> Var {
        self.constant(TensorBase::scalar(value))
    }

    pub fn value(&self, v: Var) -> &TensorBase<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.nodes[a.0].value.ew_add(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Add(a.0, b.0), self.needs(a.0) || self.needs(b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.nodes[a.0].value.ew_sub(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Sub(a.0, b.0), self.needs(a.0) || self.needs(b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.nodes[a.0].value.ew_mul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Mul(a.0, b.0), self.needs(a.0) || self.needs(b.0)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| -v);
        self.push(value, Op::Neg(a.0), self.needs(a.0))
    }

    pub fn add_const(&mut self, a: Var, c: F) -> Var {
        let value = self.nodes[a.0].value.map(|v| v + c);
        self.push(value, Op::AddConst(a.0, c), self.needs(a.0))
    }

    pub fn mul_const(&mut self, a: Var, c: F) -> Var {
        let value = self.nodes[a.0].value.map(|v| v * c);
        self.push(value, Op::MulConst(a.0, c), self.needs(a.0))
    }

    /// Elementwise `1 / (x + eps)`.
    pub fn recip(&mut self, a: Var, eps: F) -> Var {
        let value = self.nodes[a.0].value.map(|v| F::one() / (v + eps));
        self.push(value, Op::Recip(a.0, eps), self.needs(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.sqrt());
        self.push(value, Op::Sqrt(a.0), self.needs(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        // Flush deep-underflow results to zero: saturated label logits
        // otherwise fill the graph with subnormals, and arithmetic on those
        // runs an order of magnitude slower on common hardware.
        let value = self.nodes[a.0].value.map(|v| {
            let e = v.exp();
            if e < F::min_positive_value() {
                F::zero()
            } else {
                e
            }
        });
        self.push(value, Op::Exp(a.0), self.needs(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.ln());
        self.push(value, Op::Log(a.0), self.needs(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.abs());
        self.push(value, Op::Abs(a.0), self.needs(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| v.max(F::zero()));
        self.push(value, Op::Relu(a.0), self.needs(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|v| F::one() / (F::one() + (-v).exp()));
        self.push(value, Op::Sigmoid(a.0), self.needs(a.0))
    }

    /// Sum all elements down to a 0-dim scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = TensorBase::scalar(self.nodes[a.0].value.sum());
        self.push(value, Op::Sum(a.0), self.needs(a.0))
    }

    /// Replicate a scalar to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if !self.nodes[a.0].value.is_scalar() {
            return Err(Error::Argument(format!(
                "broadcast source must be a scalar, got shape {:?}",
                self.shape(a)
            )));
        }
        let value = TensorBase::filled(shape, self.nodes[a.0].value.item());
        Ok(self.push(value, Op::Broadcast(a.0), self.needs(a.0)))
    }

    fn expect_rank(&self, a: Var, rank: usize, what: &str) -> Result<()> {
        if self.shape(a).len() != rank {
            return Err(Error::Dimension(format!(
                "{what} expects rank-{rank} input, got shape {:?}",
                self.shape(a)
            )));
        }
        Ok(())
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.expect_rank(a, 2, "row_sum")?;
        let (rows, cols) = (self.shape(a)[0], self.shape(a)[1]);
        let t = &self.nodes[a.0].value;
        let mut out = vec![F::zero(); rows];
        for i in 0..rows {
            for j in 0..cols {
                out[i] += t.at2(i, j);
            }
        }
        let value = TensorBase::from_raw(vec![rows], out);
        Ok(self.push(value, Op::RowSum(a.0), self.needs(a.0)))
    }

    pub fn row_broadcast(&mut self, a: Var, cols: usize) -> Result<Var> {
        self.expect_rank(a, 1, "row_broadcast")?;
        let rows = self.shape(a)[0];
        let t = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let v = t.data()[i];
            out.extend(std::iter::repeat(v).take(cols));
        }
        let value = TensorBase::from_raw(vec![rows, cols], out);
        Ok(self.push(value, Op::RowBroadcast(a.0), self.needs(a.0)))
    }

    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        self.expect_rank(a, 2, "col_sum")?;
        let (rows, cols) = (self.shape(a)[0], self.shape(a)[1]);
        let t = &self.nodes[a.0].value;
        let mut out = vec![F::zero(); cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j] += t.at2(i, j);
            }
        }
        let value = TensorBase::from_raw(vec![cols], out);
        Ok(self.push(value, Op::ColSum(a.0), self.needs(a.0)))
    }

    pub fn col_broadcast(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.expect_rank(a, 1, "col_broadcast")?;
        let cols = self.shape(a)[0];
        let t = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            out.extend_from_slice(t.data());
        }
        let value = TensorBase::from_raw(vec![rows, cols], out);
        Ok(self.push(value, Op::ColBroadcast(a.0), self.needs(a.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_rank(a, 2, "matmul lhs")?;
        self.expect_rank(b, 2, "matmul rhs")?;
        if self.shape(a)[1] != self.shape(b)[0] {
            return Err(Error::Dimension(format!(
                "matmul inner dims disagree: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value = kernels::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value);
        Ok(self.push(value, Op::MatMul(a.0, b.0), self.needs(a.0) || self.needs(b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.expect_rank(a, 2, "transpose")?;
        let value = kernels::transpose(&self.nodes[a.0].value);
        Ok(self.push(value, Op::Transpose(a.0), self.needs(a.0)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a.0), self.needs(a.0)))
    }

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, k: Var, pad: usize, stride: usize) -> Result<Var> {
        self.expect_rank(x, 4, "conv2d input")?;
        self.expect_rank(k, 4, "conv2d kernel")?;
        if stride == 0 {
            return Err(Error::Argument("conv2d stride must be >= 1".into()));
        }
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs[1] != ks[1] {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: input {:?} vs kernel {:?}",
                xs, ks
            )));
        }
        let ho = conv_out_extent(xs[2], ks[2], pad, stride);
        let wo = conv_out_extent(xs[3], ks[3], pad, stride);
        if ho.is_none() || wo.is_none() || ho == Some(0) || wo == Some(0) {
            return Err(Error::Dimension(format!(
                "conv2d produces non-positive output extent for input {:?}, kernel {:?}, pad {pad}, stride {stride}",
                xs, ks
            )));
        }
        let value = kernels::conv2d(&self.nodes[x.0].value, &self.nodes[k.0].value, pad, stride);
        Ok(self.push(
            value,
            Op::Conv2d { x: x.0, k: k.0, pad, stride },
            self.needs(x.0) || self.needs(k.0),
        ))
    }

    fn conv_grad_input(&mut self, g: Var, k: Var, pad: usize, stride: usize, x_shape: &[usize]) -> Var {
        let value = kernels::conv2d_grad_input(
            &self.nodes[g.0].value,
            &self.nodes[k.0].value,
            pad,
            stride,
            x_shape,
        );
        self.push(
            value,
            Op::ConvGradInput { g: g.0, k: k.0, pad, stride },
            self.needs(g.0) || self.needs(k.0),
        )
    }

    fn conv_grad_kernel(&mut self, x: Var, g: Var, pad: usize, stride: usize, k_shape: &[usize]) -> Var {
        let value = kernels::conv2d_grad_kernel(
            &self.nodes[x.0].value,
            &self.nodes[g.0].value,
            pad,
            stride,
            k_shape,
        );
        self.push(
            value,
            Op::ConvGradKernel { x: x.0, g: g.0, pad, stride },
            self.needs(x.0) || self.needs(g.0),
        )
    }

    fn diff_rows(&mut self, a: Var) -> Var {
        let value = kernels::diff_rows(&self.nodes[a.0].value);
        self.push(value, Op::DiffRows(a.0), self.needs(a.0))
    }

    fn diff_rows_adjoint(&mut self, a: Var) -> Var {
        let value = kernels::diff_rows_adjoint(&self.nodes[a.0].value);
        self.push(value, Op::DiffRowsAdjoint(a.0), self.needs(a.0))
    }

    fn diff_cols(&mut self, a: Var) -> Var {
        let value = kernels::diff_cols(&self.nodes[a.0].value);
        self.push(value, Op::DiffCols(a.0), self.needs(a.0))
    }

    fn diff_cols_adjoint(&mut self, a: Var) -> Var {
        let value = kernels::diff_cols_adjoint(&self.nodes[a.0].value);
        self.push(value, Op::DiffColsAdjoint(a.0), self.needs(a.0))
    }

    // ── Composite operations ────────────────────────────────────────────

    /// `input · weight (+ bias)` for input [B,n_in], weight [n_in,n_out].
    pub fn affine(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = self.matmul(input, weight)?;
        match bias {
            None => Ok(out),
            Some(b) => {
                self.expect_rank(b, 1, "affine bias")?;
                let n_out = self.shape(out)[1];
                if self.shape(b)[0] != n_out {
                    return Err(Error::Dimension(format!(
                        "affine bias length {} does not match output width {}",
                        self.shape(b)[0],
                        n_out
                    )));
                }
                let rows = self.shape(out)[0];
                let bb = self.col_broadcast(b, rows)?;
                self.add(out, bb)
            }
        }
    }

    /// Scale a tensor by a 0-dim variable.
    pub fn scale_by(&mut self, t: Var, s: Var) -> Result<Var> {
        let shape = self.shape(t).to_vec();
        let sb = self.broadcast(s, &shape)?;
        self.mul(t, sb)
    }

    /// Sum of squared elements over a list of tensors (0-dim result).
    pub fn sum_squares_all(&mut self, vars: &[Var]) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::Argument("sum_squares_all on an empty list".into()));
        }
        let mut acc: Option<Var> = None;
        for &v in vars {
            let sq = self.mul(v, v)?;
            let s = self.sum(sq);
            acc = Some(match acc {
                None => s,
                Some(prev) => self.add(prev, s)?,
            });
        }
        Ok(acc.unwrap())
    }

    /// Frobenius norm of the concatenation of the given tensors.
    pub fn frobenius_norm_all(&mut self, vars: &[Var]) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::Argument("frobenius_norm_all on an empty list".into()));
        }
        let ssq = self.sum_squares_all(vars)?;
        Ok(self.sqrt(ssq))
    }

    /// Inner product of two aligned tensor lists (0-dim result).
    pub fn dot_all(&mut self, a: &[Var], b: &[Var]) -> Result<Var> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::Argument(format!(
                "dot_all on lists of length {} and {}",
                a.len(),
                b.len()
            )));
        }
        let mut acc: Option<Var> = None;
        for (&x, &y) in a.iter().zip(b.iter()) {
            let p = self.mul(x, y)?;
            let s = self.sum(p);
            acc = Some(match acc {
                None => s,
                Some(prev) => self.add(prev, s)?,
            });
        }
        Ok(acc.unwrap())
    }

    /// Anisotropic total variation of an image batch [B,C,H,W]: the sum of
    /// absolute forward differences along both spatial axes. Axes shorter
    /// than 2 pixels contribute nothing.
    pub fn total_variation(&mut self, image: Var) -> Result<Var> {
        self.expect_rank(image, 4, "total_variation")?;
        let (h, w) = (self.shape(image)[2], self.shape(image)[3]);
        let mut acc = self.scalar_constant(F::zero());
        if h >= 2 {
            let d = self.diff_rows(image);
            let a = self.abs(d);
            let s = self.sum(a);
            acc = self.add(acc, s)?;
        }
        if w >= 2 {
            let d = self.diff_cols(image);
            let a = self.abs(d);
            let s = self.sum(a);
            acc = self.add(acc, s)?;
        }
        Ok(acc)
    }

    /// Row-wise log-softmax with a constant max shift for stability. The
    /// shift cancels analytically, so treating it as a constant leaves both
    /// value and derivative exact.
    fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        self.expect_rank(logits, 2, "log_softmax")?;
        let cols = self.shape(logits)[1];
        let m = self.constant(row_max(&self.nodes[logits.0].value));
        let mb = self.row_broadcast(m, cols)?;
        let shifted = self.sub(logits, mb)?;
        let es = self.exp(shifted);
        let sums = self.row_sum(es)?;
        let lse = self.log(sums);
        let lse_b = self.row_broadcast(lse, cols)?;
        self.sub(shifted, lse_b)
    }

    fn softmax(&mut self, logits: Var) -> Result<Var> {
        let lsm = self.log_softmax(logits)?;
        Ok(self.exp(lsm))
    }

    /// Batch-mean cross entropy between `logits` and a *soft* target given
    /// as label logits: the target distribution is `softmax(label_logits)`
    /// and gradients flow through it.
    pub fn cross_entropy_soft(&mut self, logits: Var, label_logits: Var) -> Result<Var> {
        self.same_shape(logits, label_logits, "cross_entropy_soft")?;
        self.expect_rank(logits, 2, "cross_entropy_soft")?;
        let batch = self.shape(logits)[0];
        let logq = self.log_softmax(logits)?;
        let p = self.softmax(label_logits)?;
        let prod = self.mul(p, logq)?;
        let total = self.sum(prod);
        Ok(self.mul_const(total, -F::one() / cast::<F>(batch as f64)))
    }

    /// Batch-mean cross entropy against hard integer labels.
    pub fn cross_entropy_hard(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.expect_rank(logits, 2, "cross_entropy_hard")?;
        let (batch, classes) = (self.shape(logits)[0], self.shape(logits)[1]);
        if labels.len() != batch {
            return Err(Error::Dimension(format!(
                "{} labels for batch of {}",
                labels.len(),
                batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut onehot = vec![F::zero(); batch * classes];
        for (b, &l) in labels.iter().enumerate() {
            onehot[b * classes + l] = F::one();
        }
        let oh = self.constant(TensorBase::from_raw(vec![batch, classes], onehot));
        let logq = self.log_softmax(logits)?;
        let picked = self.mul(oh, logq)?;
        let total = self.sum(picked);
        Ok(self.mul_const(total, -F::one() / cast::<F>(batch as f64)))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-mode gradients of a 0-dim `root` with respect to `wrt`.
    ///
    /// The adjoint computation is recorded on this same graph, so with
    /// `retain_graph` the returned gradient variables can appear in further
    /// expressions and be differentiated in turn. Variables not reachable
    /// from `root` receive a zero gradient of matching shape.
    pub fn gradients(&mut self, root: Var, wrt: &[Var], retain_graph: bool) -> Result<GradResultBase<F>> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Argument(format!(
                "gradients root must be 0-dim, got shape {:?}",
                self.shape(root)
            )));
        }
        let sweep_len = root.0 + 1;
        let mut adjoint: Vec<Option<Var>> = vec![None; sweep_len];
        adjoint[root.0] = Some(self.scalar_constant(F::one()));

        for id in (0..sweep_len).rev() {
            let Some(g) = adjoint[id] else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    self.accumulate(&mut adjoint, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    if self.needs(b) {
                        let n = self.neg(g);
                        self.accumulate(&mut adjoint, b, n)?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let c = self.mul(g, Var(b))?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                    if self.needs(b) {
                        let c = self.mul(g, Var(a))?;
                        self.accumulate(&mut adjoint, b, c)?;
                    }
                }
                Op::Neg(a) => {
                    if self.needs(a) {
                        let n = self.neg(g);
                        self.accumulate(&mut adjoint, a, n)?;
                    }
                }
                Op::AddConst(a, _) => {
                    self.accumulate(&mut adjoint, a, g)?;
                }
                Op::MulConst(a, c) => {
                    if self.needs(a) {
                        let m = self.mul_const(g, c);
                        self.accumulate(&mut adjoint, a, m)?;
                    }
                }
                Op::Recip(a, _) => {
                    // d(1/(x+eps))/dx = -out^2
                    if self.needs(a) {
                        let out_sq = self.mul(Var(id), Var(id))?;
                        let m = self.mul(g, out_sq)?;
                        let n = self.neg(m);
                        self.accumulate(&mut adjoint, a, n)?;
                    }
                }
                Op::Sqrt(a) => {
                    // 0.5 * g / out, with the norm floor in the denominator.
                    if self.needs(a) {
                        let inv = self.recip(Var(id), cast::<F>(NORM_EPS));
                        let m = self.mul(g, inv)?;
                        let h = self.mul_const(m, cast::<F>(0.5));
                        self.accumulate(&mut adjoint, a, h)?;
                    }
                }
                Op::Exp(a) => {
                    if self.needs(a) {
                        let m = self.mul(g, Var(id))?;
                        self.accumulate(&mut adjoint, a, m)?;
                    }
                }
                Op::Log(a) => {
                    if self.needs(a) {
                        let inv = self.recip(Var(a), F::zero());
                        let m = self.mul(g, inv)?;
                        self.accumulate(&mut adjoint, a, m)?;
                    }
                }
                Op::Abs(a) => {
                    // Subgradient: sign(x), 0 at x == 0.
                    if self.needs(a) {
                        let sign = self.nodes[a].value.map(|v| {
                            if v > F::zero() {
                                F::one()
                            } else if v < F::zero() {
                                -F::one()
                            } else {
                                F::zero()
                            }
                        });
                        let s = self.constant(sign);
                        let m = self.mul(g, s)?;
                        self.accumulate(&mut adjoint, a, m)?;
                    }
                }
                Op::Relu(a) => {
                    if self.needs(a) {
                        let mask = self.nodes[a].value.map(|v| {
                            if v > F::zero() {
                                F::one()
                            } else {
                                F::zero()
                            }
                        });
                        let m = self.constant(mask);
                        let p = self.mul(g, m)?;
                        self.accumulate(&mut adjoint, a, p)?;
                    }
                }
                Op::Sigmoid(a) => {
                    // out * (1 - out)
                    if self.needs(a) {
                        let out = Var(id);
                        let n = self.neg(out);
                        let one_minus = self.add_const(n, F::one());
                        let d = self.mul(out, one_minus)?;
                        let m = self.mul(g, d)?;
                        self.accumulate(&mut adjoint, a, m)?;
                    }
                }
                Op::Sum(a) => {
                    if self.needs(a) {
                        let shape = self.shape(Var(a)).to_vec();
                        let b = self.broadcast(g, &shape)?;
                        self.accumulate(&mut adjoint, a, b)?;
                    }
                }
                Op::Broadcast(a) => {
                    if self.needs(a) {
                        let s = self.sum(g);
                        self.accumulate(&mut adjoint, a, s)?;
                    }
                }
                Op::RowSum(a) => {
                    if self.needs(a) {
                        let cols = self.shape(Var(a))[1];
                        let b = self.row_broadcast(g, cols)?;
                        self.accumulate(&mut adjoint, a, b)?;
                    }
                }
                Op::RowBroadcast(a) => {
                    if self.needs(a) {
                        let s = self.row_sum(g)?;
                        self.accumulate(&mut adjoint, a, s)?;
                    }
                }
                Op::ColSum(a) => {
                    if self.needs(a) {
                        let rows = self.shape(Var(a))[0];
                        let b = self.col_broadcast(g, rows)?;
                        self.accumulate(&mut adjoint, a, b)?;
                    }
                }
                Op::ColBroadcast(a) => {
                    if self.needs(a) {
                        let s = self.col_sum(g)?;
                        self.accumulate(&mut adjoint, a, s)?;
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let bt = self.transpose(Var(b))?;
                        let c = self.matmul(g, bt)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                    if self.needs(b) {
                        let at = self.transpose(Var(a))?;
                        let c = self.matmul(at, g)?;
                        self.accumulate(&mut adjoint, b, c)?;
                    }
                }
                Op::Transpose(a) => {
                    if self.needs(a) {
                        let t = self.transpose(g)?;
                        self.accumulate(&mut adjoint, a, t)?;
                    }
                }
                Op::Reshape(a) => {
                    if self.needs(a) {
                        let shape = self.shape(Var(a)).to_vec();
                        let r = self.reshape(g, &shape)?;
                        self.accumulate(&mut adjoint, a, r)?;
                    }
                }
                Op::Conv2d { x, k, pad, stride } => {
                    if self.needs(x) {
                        let xs = self.shape(Var(x)).to_vec();
                        let c = self.conv_grad_input(g, Var(k), pad, stride, &xs);
                        self.accumulate(&mut adjoint, x, c)?;
                    }
                    if self.needs(k) {
                        let ks = self.shape(Var(k)).to_vec();
                        let c = self.conv_grad_kernel(Var(x), g, pad, stride, &ks);
                        self.accumulate(&mut adjoint, k, c)?;
                    }
                }
                Op::ConvGradInput { g: gi, k, pad, stride } => {
                    // node = A(gi; k); upstream g is input-shaped.
                    if self.needs(gi) {
                        let c = self.conv2d(g, Var(k), pad, stride)?;
                        self.accumulate(&mut adjoint, gi, c)?;
                    }
                    if self.needs(k) {
                        let ks = self.shape(Var(k)).to_vec();
                        let c = self.conv_grad_kernel(g, Var(gi), pad, stride, &ks);
                        self.accumulate(&mut adjoint, k, c)?;
                    }
                }
                Op::ConvGradKernel { x, g: gi, pad, stride } => {
                    // node = B(x; gi); upstream g is kernel-shaped.
                    if self.needs(x) {
                        let xs = self.shape(Var(x)).to_vec();
                        let c = self.conv_grad_input(Var(gi), g, pad, stride, &xs);
                        self.accumulate(&mut adjoint, x, c)?;
                    }
                    if self.needs(gi) {
                        let c = self.conv2d(Var(x), g, pad, stride)?;
                        self.accumulate(&mut adjoint, gi, c)?;
                    }
                }
                Op::DiffRows(a) => {
                    if self.needs(a) {
                        let c = self.diff_rows_adjoint(g);
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::DiffRowsAdjoint(a) => {
                    if self.needs(a) {
                        let c = self.diff_rows(g);
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::DiffCols(a) => {
                    if self.needs(a) {
                        let c = self.diff_cols_adjoint(g);
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
                Op::DiffColsAdjoint(a) => {
                    if self.needs(a) {
                        let c = self.diff_cols(g);
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                }
            }
        }

        let mut grads = Vec::with_capacity(wrt.len());
        let mut vars = Vec::with_capacity(wrt.len());
        for &v in wrt {
            let gv = match adjoint.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = TensorBase::zeros(self.shape(v));
                    self.constant(z)
                }
            };
            grads.push(self.nodes[gv.0].value.clone());
            vars.push(gv);
        }
        Ok(GradResultBase {
            grads,
            vars: retain_graph.then_some(vars),
        })
    }

    fn accumulate(&mut self, adjoint: &mut [Option<Var>], target: usize, contribution: Var) -> Result<()> {
        if !self.needs(target) {
            return Ok(());
        }
        adjoint[target] = Some(match adjoint[target] {
            None => contribution,
            Some(prev) => self.add(prev, contribution)?,
        });
        Ok(())
    }
}

fn row_max<F: Scalar>(t: &TensorBase<F>) -> TensorBase<F> {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut m = t.at2(i, 0);
        for j in 1..cols {
            m = m.max(t.at2(i, j));
        }
        out.push(m);
    }
    TensorBase::from_raw(vec![rows], out)
}
