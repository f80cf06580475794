//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape: every builder method records the
//! operation, evaluates it eagerly and returns a [`NodeId`]. [`Graph::backward`]
//! walks the tape in reverse, accumulating gradients into every node that
//! (transitively) depends on a gradient-carrying leaf. Values used several
//! times — skip connections, shared gate parameters — accumulate by summation.
//!
//! Graphs are single-threaded; independent graphs can run on separate
//! threads. All arithmetic is sequential and seeded, so identical inputs
//! give bit-identical outputs.

mod conv;
mod gradcheck;

pub use conv::{conv2d_out_dim, ConvGeom};
pub use gradcheck::grad_check;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

/// Exponential-moving-average channel statistics kept by batch norm outside
/// the graph (they are state, not trainable parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Batch norm operating mode. Training normalizes by batch statistics and
/// optionally folds them into the running stats; eval normalizes by the
/// running stats.
pub enum BnMode<'a> {
    Train { running: Option<&'a mut RunningStats> },
    Eval { running: &'a RunningStats },
}

#[derive(Clone, Debug)]
struct BnSaved {
    mean: Vec<f64>,
    var: Vec<f64>,
    train: bool,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    SqrtEps(NodeId, f64),
    Clamp(NodeId, f64, f64),
    Reshape(NodeId),
    SliceAxis0 {
        x: NodeId,
        start: usize,
    },
    StackCols(Vec<NodeId>),
    SelectCols {
        x: NodeId,
        indices: Vec<usize>,
    },
    SumAxis {
        x: NodeId,
        axis: usize,
    },
    SumAll(NodeId),
    BandPool {
        x: NodeId,
        edges: Vec<(usize, usize)>,
    },
    Affine {
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
    },
    Conv2d {
        x: NodeId,
        k: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    ConvT2d {
        x: NodeId,
        k: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        saved: BnSaved,
    },
    Mse(NodeId, NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient-carrying input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Input treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- elementwise binary ops with singleton broadcasting ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = broadcast_zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = broadcast_zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = broadcast_zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = broadcast_zip("div", self.value(a), self.value(b), |x, y| x / y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Div(a, b), rg))
    }

    // ---- elementwise unary ops ----

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v + c);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::AddScalar(x), rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).map(|v| v * c);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(math::sigmoid);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(math::tanh);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(math::exp);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Exp(x), rg)
    }

    /// `sqrt(x + eps)`, differentiable at zero for positive `eps`.
    pub fn sqrt_eps(&mut self, x: NodeId, eps: f64) -> NodeId {
        let value = self.value(x).map(|v| math::sqrt(v + eps));
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::SqrtEps(x, eps), rg)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, Op::Clamp(x, lo, hi), rg)
    }

    // ---- structural ops ----

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Slice `len` entries starting at `start` along axis 0.
    pub fn slice_axis0(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xs = self.value(x);
        let shape = xs.shape();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::shape(
                "slice_axis0",
                format!("slice {start}..{} out of axis of {:?}", start + len, shape),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[0] = len;
        let data = xs.data()[start * inner..(start + len) * inner].to_vec();
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, Op::SliceAxis0 { x, start }, rg))
    }

    /// Stack `T` rank-1 tensors of length `R` into an `[R, T]` matrix.
    pub fn stack_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("stack_cols", "no columns"));
        }
        let r = self.value(parts[0]).numel();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 || v.numel() != r {
                return Err(Error::shape(
                    "stack_cols",
                    format!("expected rank-1 of length {r}, got {:?}", v.shape()),
                ));
            }
        }
        let t = parts.len();
        let mut data = vec![0.0; r * t];
        for (ti, &p) in parts.iter().enumerate() {
            for (ri, &v) in self.value(p).data().iter().enumerate() {
                data[ri * t + ti] = v;
            }
        }
        let value = Tensor::new(&[r, t], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::StackCols(parts.to_vec()), rg))
    }

    /// Keep the listed columns of an `[R, C]` matrix, in the given order.
    pub fn select_cols(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let xs = self.value(x);
        if xs.rank() != 2 {
            return Err(Error::shape(
                "select_cols",
                format!("expected rank 2, got {:?}", xs.shape()),
            ));
        }
        let (r, c) = (xs.shape()[0], xs.shape()[1]);
        if indices.is_empty() {
            return Err(Error::invalid("select_cols", "empty index set"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::invalid(
                "select_cols",
                format!("column {bad} out of range for {c} columns"),
            ));
        }
        let l = indices.len();
        let mut data = vec![0.0; r * l];
        for ri in 0..r {
            for (li, &ci) in indices.iter().enumerate() {
                data[ri * l + li] = xs.data()[ri * c + ci];
            }
        }
        let value = Tensor::new(&[r, l], data)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            value,
            Op::SelectCols {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Sum along one axis, keeping it as a singleton dimension.
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xs = self.value(x);
        if axis >= xs.rank() {
            return Err(Error::invalid(
                "sum_axis",
                format!("axis {axis} out of range for rank {}", xs.rank()),
            ));
        }
        let shape = xs.shape();
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = 1;
        let mut data = vec![0.0; outer * inner];
        let src = xs.data();
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    data[dst + i] += src[base + i];
                }
            }
        }
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, Op::SumAxis { x, axis }, rg))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Linear band pooling: sum rows `lo..=hi` of an `[F, M]` matrix per band.
    pub fn band_pool(&mut self, x: NodeId, edges: &[(usize, usize)]) -> Result<NodeId> {
        let xs = self.value(x);
        if xs.rank() != 2 {
            return Err(Error::shape(
                "band_pool",
                format!("expected rank 2, got {:?}", xs.shape()),
            ));
        }
        let (f, m) = (xs.shape()[0], xs.shape()[1]);
        for &(lo, hi) in edges {
            if lo > hi || hi >= f {
                return Err(Error::invalid(
                    "band_pool",
                    format!("band {lo}..={hi} out of range for {f} rows"),
                ));
            }
        }
        let j = edges.len();
        let mut data = vec![0.0; j * m];
        let src = xs.data();
        for (ji, &(lo, hi)) in edges.iter().enumerate() {
            for k in lo..=hi {
                for mi in 0..m {
                    data[ji * m + mi] += src[k * m + mi];
                }
            }
        }
        let value = Tensor::new(&[j, m], data)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            value,
            Op::BandPool {
                x,
                edges: edges.to_vec(),
            },
            rg,
        ))
    }

    /// `w[out,in] . x[in] (+ b[out])`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (wv, xv) = (self.value(w), self.value(x));
        if wv.rank() != 2 || xv.rank() != 1 || wv.shape()[1] != xv.shape()[0] {
            return Err(Error::shape(
                "affine",
                format!("w {:?} . x {:?}", wv.shape(), xv.shape()),
            ));
        }
        let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let wrow = &wv.data()[r * cols..(r + 1) * cols];
            data[r] = wrow.iter().zip(xv.data()).map(|(a, b)| a * b).sum();
        }
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [rows] {
                return Err(Error::shape(
                    "affine",
                    format!("bias {:?} for {rows} outputs", bv.shape()),
                ));
            }
            for (d, &bias) in data.iter_mut().zip(bv.data()) {
                *d += bias;
            }
        }
        let value = Tensor::new(&[rows], data)?;
        let mut ids = vec![w, x];
        ids.extend(b);
        let rg = self.any_grad(&ids);
        Ok(self.push(value, Op::Affine { w, x, b }, rg))
    }

    /// 2-D cross-correlation over `[C_in, F, T]` with kernel `[C_out, C_in, kf, kt]`.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: Option<NodeId>, geom: ConvGeom) -> Result<NodeId> {
        let value = conv::conv2d_forward(self.value(x), self.value(k), b.map(|b| self.value(b)), geom)?;
        let mut ids = vec![x, k];
        ids.extend(b);
        let rg = self.any_grad(&ids);
        Ok(self.push(value, Op::Conv2d { x, k, b, geom }, rg))
    }

    /// Exact linear adjoint of [`Graph::conv2d`] with the same kernel and
    /// geometry; `out_hw` picks among the sizes consistent with the stride.
    pub fn conv2d_transposed(
        &mut self,
        x: NodeId,
        k: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
        out_hw: (usize, usize),
    ) -> Result<NodeId> {
        let value = conv::convt2d_forward(self.value(x), self.value(k), b.map(|b| self.value(b)), geom, out_hw)?;
        let mut ids = vec![x, k];
        ids.extend(b);
        let rg = self.any_grad(&ids);
        Ok(self.push(value, Op::ConvT2d { x, k, b, geom }, rg))
    }

    /// Per-channel batch normalization of `[C, F, T]` or `[B, C, F, T]`.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        momentum: f64,
        mode: BnMode<'_>,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let (channels, per_channel) = bn_layout(xv)?;
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.numel() != channels || bv.numel() != channels {
            return Err(Error::shape(
                "batch_norm",
                format!("gamma/beta of {}/{} for {channels} channels", gv.numel(), bv.numel()),
            ));
        }

        let (mean, var, train) = match mode {
            BnMode::Train { running } => {
                if per_channel < 2 {
                    return Err(Error::invalid(
                        "batch_norm",
                        format!("training needs at least 2 values per channel, got {per_channel}"),
                    ));
                }
                let (mean, var) = bn_batch_stats(xv, channels);
                if let Some(run) = running {
                    for c in 0..channels {
                        run.mean[c] = momentum * run.mean[c] + (1.0 - momentum) * mean[c];
                        run.var[c] = momentum * run.var[c] + (1.0 - momentum) * var[c];
                    }
                }
                (mean, var, true)
            }
            BnMode::Eval { running } => {
                if running.mean.len() != channels {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("running stats cover {} channels, input has {channels}", running.mean.len()),
                    ));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };

        let mut out = Tensor::zeros(xv.shape());
        bn_apply(xv, &mean, &var, gv.data(), bv.data(), eps, out.data_mut());
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps,
                saved: BnSaved { mean, var, train },
            },
            rg,
        ))
    }

    /// Mean squared difference over all elements, as a scalar node.
    pub fn mse(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xv, yv) = (self.value(x), self.value(y));
        if xv.shape() != yv.shape() {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", xv.shape(), yv.shape()),
            ));
        }
        let n = xv.numel() as f64;
        let s: f64 = xv
            .data()
            .iter()
            .zip(yv.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(x, y), rg))
    }

    /// Smallest distance of any relu or clamp input from its kink point.
    /// Finite-difference checks are only valid when this comfortably exceeds
    /// the probe step times the local sensitivity.
    pub fn min_kink_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        min = min.min(math::abs(v));
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    for &v in self.nodes[x.0].value.data() {
                        min = min.min(math::abs(v - lo)).min(math::abs(v - hi));
                    }
                }
                _ => {}
            }
        }
        min
    }

    /// Reverse pass from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, has shape {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.accumulate_inputs(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_inputs(&self, idx: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.bcast_accum(*a, gy, grads, |_xa, _xb, g| g, idx, *b);
                self.bcast_accum(*b, gy, grads, |_xa, _xb, g| g, idx, *a);
            }
            Op::Sub(a, b) => {
                self.bcast_accum(*a, gy, grads, |_xa, _xb, g| g, idx, *b);
                self.bcast_accum(*b, gy, grads, |_xa, _xb, g| -g, idx, *a);
            }
            Op::Mul(a, b) => {
                self.bcast_accum(*a, gy, grads, |_t, other, g| g * other, idx, *b);
                self.bcast_accum(*b, gy, grads, |_t, other, g| g * other, idx, *a);
            }
            Op::Div(a, b) => {
                self.bcast_accum(*a, gy, grads, |_t, other, g| g / other, idx, *b);
                // d(a/b)/db = -a/b^2; here t is b's value, other is a's
                self.bcast_accum(*b, gy, grads, |t, other, g| -g * other / (t * t), idx, *a);
            }
            Op::AddScalar(x) => self.unary_accum(*x, gy, grads, |_xv, g| g),
            Op::Scale(x, c) => {
                let c = *c;
                self.unary_accum(*x, gy, grads, move |_xv, g| g * c)
            }
            Op::Relu(x) => self.unary_accum(*x, gy, grads, |xv, g| if xv > 0.0 { g } else { 0.0 }),
            Op::Sigmoid(x) => self.unary_accum(*x, gy, grads, |xv, g| {
                let s = math::sigmoid(xv);
                g * s * (1.0 - s)
            }),
            Op::Tanh(x) => self.unary_accum(*x, gy, grads, |xv, g| {
                let t = math::tanh(xv);
                g * (1.0 - t * t)
            }),
            Op::Exp(x) => self.unary_accum(*x, gy, grads, |xv, g| g * math::exp(xv)),
            Op::SqrtEps(x, eps) => {
                let eps = *eps;
                self.unary_accum(*x, gy, grads, move |xv, g| g * 0.5 / math::sqrt(xv + eps))
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.unary_accum(*x, gy, grads, move |xv, g| {
                    if xv > lo && xv < hi {
                        g
                    } else {
                        0.0
                    }
                })
            }
            Op::Reshape(x) => {
                if self.nodes[x.0].requires_grad {
                    let gx = gy.reshaped(self.value(*x).shape()).expect("reshape grad");
                    accumulate(grads, *x, gx);
                }
            }
            Op::SliceAxis0 { x, start } => {
                if self.nodes[x.0].requires_grad {
                    let xs = self.value(*x);
                    let inner: usize = xs.shape()[1..].iter().product();
                    let mut gx = Tensor::zeros(xs.shape());
                    let dst = &mut gx.data_mut()[start * inner..start * inner + gy.numel()];
                    dst.copy_from_slice(gy.data());
                    accumulate(grads, *x, gx);
                }
            }
            Op::StackCols(parts) => {
                let t = parts.len();
                for (ti, &p) in parts.iter().enumerate() {
                    if !self.nodes[p.0].requires_grad {
                        continue;
                    }
                    let r = self.value(p).numel();
                    let mut gp = Tensor::zeros(&[r]);
                    for ri in 0..r {
                        gp.data_mut()[ri] = gy.data()[ri * t + ti];
                    }
                    accumulate(grads, p, gp);
                }
            }
            Op::SelectCols { x, indices } => {
                if self.nodes[x.0].requires_grad {
                    let xs = self.value(*x);
                    let (r, c) = (xs.shape()[0], xs.shape()[1]);
                    let l = indices.len();
                    let mut gx = Tensor::zeros(&[r, c]);
                    for ri in 0..r {
                        for (li, &ci) in indices.iter().enumerate() {
                            gx.data_mut()[ri * c + ci] += gy.data()[ri * l + li];
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::SumAxis { x, axis } => {
                if self.nodes[x.0].requires_grad {
                    let xs = self.value(*x);
                    let shape = xs.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let mid = shape[*axis];
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let mut gx = Tensor::zeros(shape);
                    let gd = gy.data();
                    let gxd = gx.data_mut();
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            let src = o * inner;
                            for i in 0..inner {
                                gxd[base + i] += gd[src + i];
                            }
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::SumAll(x) => {
                if self.nodes[x.0].requires_grad {
                    let g = gy.item();
                    let gx = Tensor::full(self.value(*x).shape(), g);
                    accumulate(grads, *x, gx);
                }
            }
            Op::BandPool { x, edges } => {
                if self.nodes[x.0].requires_grad {
                    let xs = self.value(*x);
                    let (f, m) = (xs.shape()[0], xs.shape()[1]);
                    let mut gx = Tensor::zeros(&[f, m]);
                    let gd = gy.data();
                    let gxd = gx.data_mut();
                    for (ji, &(lo, hi)) in edges.iter().enumerate() {
                        for k in lo..=hi {
                            for mi in 0..m {
                                gxd[k * m + mi] += gd[ji * m + mi];
                            }
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Affine { w, x, b } => {
                let wv = self.value(*w);
                let xv = self.value(*x);
                let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
                if self.nodes[w.0].requires_grad {
                    let mut gw = Tensor::zeros(&[rows, cols]);
                    for r in 0..rows {
                        let g = gy.data()[r];
                        let row = &mut gw.data_mut()[r * cols..(r + 1) * cols];
                        for (dst, &xi) in row.iter_mut().zip(xv.data()) {
                            *dst = g * xi;
                        }
                    }
                    accumulate(grads, *w, gw);
                }
                if self.nodes[x.0].requires_grad {
                    let mut gx = Tensor::zeros(&[cols]);
                    for r in 0..rows {
                        let g = gy.data()[r];
                        let row = &wv.data()[r * cols..(r + 1) * cols];
                        for (dst, &wi) in gx.data_mut().iter_mut().zip(row) {
                            *dst += g * wi;
                        }
                    }
                    accumulate(grads, *x, gx);
                }
                if let Some(b) = b {
                    if self.nodes[b.0].requires_grad {
                        accumulate(grads, *b, gy.clone());
                    }
                }
            }
            Op::Conv2d { x, k, b, geom } => {
                let want_x = self.nodes[x.0].requires_grad;
                let want_k = self.nodes[k.0].requires_grad;
                let (gx, gk) = conv::conv2d_backward(self.value(*x), self.value(*k), *geom, gy, want_x, want_k);
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if let Some(gk) = gk {
                    accumulate(grads, *k, gk);
                }
                if let Some(b) = b {
                    if self.nodes[b.0].requires_grad {
                        accumulate(grads, *b, conv::bias_grad(gy));
                    }
                }
            }
            Op::ConvT2d { x, k, b, geom } => {
                let want_x = self.nodes[x.0].requires_grad;
                let want_k = self.nodes[k.0].requires_grad;
                let (gx, gk) = conv::convt2d_backward(self.value(*x), self.value(*k), *geom, gy, want_x, want_k);
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if let Some(gk) = gk {
                    accumulate(grads, *k, gk);
                }
                if let Some(b) = b {
                    if self.nodes[b.0].requires_grad {
                        accumulate(grads, *b, conv::bias_grad(gy));
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps,
                saved,
            } => {
                self.batch_norm_backward(*x, *gamma, *beta, *eps, saved, gy, grads);
            }
            Op::Mse(x, y) => {
                let g = gy.item();
                let xv = self.value(*x);
                let yv = self.value(*y);
                let n = xv.numel() as f64;
                if self.nodes[x.0].requires_grad {
                    let mut gx = Tensor::zeros(xv.shape());
                    for ((dst, &a), &b) in gx.data_mut().iter_mut().zip(xv.data()).zip(yv.data()) {
                        *dst = g * 2.0 * (a - b) / n;
                    }
                    accumulate(grads, *x, gx);
                }
                if self.nodes[y.0].requires_grad {
                    let mut gyv = Tensor::zeros(yv.shape());
                    for ((dst, &a), &b) in gyv.data_mut().iter_mut().zip(xv.data()).zip(yv.data()) {
                        *dst = -g * 2.0 * (a - b) / n;
                    }
                    accumulate(grads, *y, gyv);
                }
            }
        }
    }

    /// Backward for elementwise unary ops: `gx[i] = f(x[i], gy[i])`.
    fn unary_accum(
        &self,
        x: NodeId,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
        f: impl Fn(f64, f64) -> f64,
    ) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let xv = self.value(x);
        let mut gx = Tensor::zeros(xv.shape());
        for ((dst, &xi), &gi) in gx.data_mut().iter_mut().zip(xv.data()).zip(gy.data()) {
            *dst = f(xi, gi);
        }
        accumulate(grads, x, gx);
    }

    /// Backward for a broadcasting binary op into input `target`. The local
    /// gradient `f(target_value, other_value, gy)` is evaluated at every
    /// broadcast position and summed onto `target`'s shape.
    fn bcast_accum(
        &self,
        target: NodeId,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
        f: impl Fn(f64, f64, f64) -> f64,
        _op_idx: usize,
        other: NodeId,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let tv = self.value(target);
        let ov = self.value(other);
        let mut gx = Tensor::zeros(tv.shape());
        let out_shape = gy.shape().to_vec();
        let t_stride = broadcast_strides(tv.shape(), &out_shape);
        let o_stride = broadcast_strides(ov.shape(), &out_shape);
        let mut idx = vec![0usize; out_shape.len()];
        for flat in 0..gy.numel() {
            let (ti, oi) = offsets(&idx, &t_stride, &o_stride);
            gx.data_mut()[ti] += f(tv.data()[ti], ov.data()[oi], gy.data()[flat]);
            step(&mut idx, &out_shape);
        }
        accumulate(grads, target, gx);
    }

    fn batch_norm_backward(
        &self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        saved: &BnSaved,
        gy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let xv = self.value(x);
        let (channels, n) = bn_layout(xv).expect("validated at forward");
        let gv = self.value(gamma);
        let nf = n as f64;

        let mut gga = vec![0.0; channels];
        let mut gbe = vec![0.0; channels];
        let mut sum_g = vec![0.0; channels];
        let mut sum_gxh = vec![0.0; channels];

        bn_for_each(xv, channels, |c, flat| {
            let s = math::sqrt(saved.var[c] + eps);
            let xh = (xv.data()[flat] - saved.mean[c]) / s;
            let g = gy.data()[flat];
            gga[c] += g * xh;
            gbe[c] += g;
            sum_g[c] += g;
            sum_gxh[c] += g * xh;
        });

        if self.nodes[x.0].requires_grad {
            let mut gx = Tensor::zeros(xv.shape());
            let gxd = gx.data_mut();
            bn_for_each(xv, channels, |c, flat| {
                let s = math::sqrt(saved.var[c] + eps);
                let gamma_c = gv.data()[c];
                let g = gy.data()[flat];
                gxd[flat] = if saved.train {
                    let xh = (xv.data()[flat] - saved.mean[c]) / s;
                    gamma_c / s * (g - sum_g[c] / nf - xh * sum_gxh[c] / nf)
                } else {
                    gamma_c / s * g
                };
            });
            accumulate(grads, x, gx);
        }
        if self.nodes[gamma.0].requires_grad {
            accumulate(grads, gamma, Tensor::new(self.value(gamma).shape(), gga).unwrap());
        }
        if self.nodes[beta.0].requires_grad {
            accumulate(grads, beta, Tensor::new(self.value(beta).shape(), gbe).unwrap());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Channel layout for batch norm: `[C, F, T]` has channels on axis 0,
/// `[B, C, F, T]` on axis 1. Returns (channels, elements per channel).
fn bn_layout(x: &Tensor) -> Result<(usize, usize)> {
    match x.rank() {
        3 => Ok((x.shape()[0], x.shape()[1] * x.shape()[2])),
        4 => Ok((x.shape()[1], x.shape()[0] * x.shape()[2] * x.shape()[3])),
        r => Err(Error::shape(
            "batch_norm",
            format!("expected rank 3 or 4, got rank {r}"),
        )),
    }
}

/// Visit every element with its channel index.
fn bn_for_each(x: &Tensor, channels: usize, mut f: impl FnMut(usize, usize)) {
    match x.rank() {
        3 => {
            let inner = x.shape()[1] * x.shape()[2];
            for c in 0..channels {
                for i in 0..inner {
                    f(c, c * inner + i);
                }
            }
        }
        4 => {
            let b = x.shape()[0];
            let inner = x.shape()[2] * x.shape()[3];
            for bi in 0..b {
                for c in 0..channels {
                    let base = (bi * channels + c) * inner;
                    for i in 0..inner {
                        f(c, base + i);
                    }
                }
            }
        }
        _ => unreachable!("validated by bn_layout"),
    }
}

fn bn_batch_stats(x: &Tensor, channels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; channels];
    let mut count = vec![0usize; channels];
    bn_for_each(x, channels, |c, flat| {
        mean[c] += x.data()[flat];
        count[c] += 1;
    });
    for c in 0..channels {
        mean[c] /= count[c] as f64;
    }
    let mut var = vec![0.0; channels];
    bn_for_each(x, channels, |c, flat| {
        let d = x.data()[flat] - mean[c];
        var[c] += d * d;
    });
    for c in 0..channels {
        var[c] /= count[c] as f64;
    }
    (mean, var)
}

fn bn_apply(x: &Tensor, mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64], eps: f64, out: &mut [f64]) {
    let channels = mean.len();
    bn_for_each(x, channels, |c, flat| {
        let s = math::sqrt(var[c] + eps);
        out[flat] = gamma[c] * (x.data()[flat] - mean[c]) / s + beta[c];
    });
}

// ---- broadcasting helpers ----

/// Output shape of a singleton-broadcast binary op, or an error.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank {:?} vs {:?}", a, b)));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x == y {
                Ok(x)
            } else if x == 1 {
                Ok(y)
            } else if y == 1 {
                Ok(x)
            } else {
                Err(Error::shape(op, format!("{:?} vs {:?}", a, b)))
            }
        })
        .collect()
}

/// Row-major strides of `shape` viewed under `out_shape`, with zero stride on
/// broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    let _ = out_shape;
    strides
}

#[inline]
fn offsets(idx: &[usize], a_stride: &[usize], b_stride: &[usize]) -> (usize, usize) {
    let mut a = 0;
    let mut b = 0;
    for i in 0..idx.len() {
        a += idx[i] * a_stride[i];
        b += idx[i] * b_stride[i];
    }
    (a, b)
}

#[inline]
fn step(idx: &mut [usize], shape: &[usize]) {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < shape[i] {
            return;
        }
        idx[i] = 0;
    }
}

fn broadcast_zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        // fast path, no index arithmetic
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let a_stride = broadcast_strides(a.shape(), &out_shape);
    let b_stride = broadcast_strides(b.shape(), &out_shape);
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    let mut idx = vec![0usize; out_shape.len()];
    for slot in data.iter_mut() {
        let (ai, bi) = offsets(&idx, &a_stride, &b_stride);
        *slot = f(a.data()[ai], b.data()[bi]);
        step(&mut idx, &out_shape);
    }
    Tensor::new(&out_shape, data)
}

// ---- LSTM cell ----

/// Node ids of one LSTM cell's parameters. Gate order in the stacked
/// matrices is input, forget, cell candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParamNodes {
    /// `[4H, D]` input weights.
    pub w_x: NodeId,
    /// `[4H, H]` recurrent weights.
    pub w_h: NodeId,
    /// `[4H]` bias.
    pub b: NodeId,
}

/// One LSTM step: consumes `x_t` `[D]` and state `(h, c)` `[H]`, produces the
/// next state. Built from primitives, so backward through time falls out of
/// the tape replay.
pub fn lstm_step(
    g: &mut Graph,
    x_t: NodeId,
    state: (NodeId, NodeId),
    params: &LstmParamNodes,
) -> Result<(NodeId, NodeId)> {
    let (h, c) = state;
    let hidden = g.value(h).numel();
    let from_x = g.affine(params.w_x, x_t, Some(params.b))?;
    let from_h = g.affine(params.w_h, h, None)?;
    let pre = g.add(from_x, from_h)?;
    let i_gate = g.slice_axis0(pre, 0, hidden)?;
    let f_gate = g.slice_axis0(pre, hidden, hidden)?;
    let z_cand = g.slice_axis0(pre, 2 * hidden, hidden)?;
    let o_gate = g.slice_axis0(pre, 3 * hidden, hidden)?;
    let i_gate = g.sigmoid(i_gate);
    let f_gate = g.sigmoid(f_gate);
    let z_cand = g.tanh(z_cand);
    let o_gate = g.sigmoid(o_gate);
    let keep = g.mul(f_gate, c)?;
    let write = g.mul(i_gate, z_cand)?;
    let c_next = g.add(keep, write)?;
    let c_act = g.tanh(c_next);
    let h_next = g.mul(o_gate, c_act)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[1], 0.5);
    }

    #[test]
    fn add_broadcasts_singleton_axes() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.leaf(t(&[2, 1], &[10.0, 20.0]));
        let y = g.add(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);

        let c = g.leaf(t(&[3, 2], &[0.0; 6]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn broadcast_backward_reduces() {
        // y = sum(a * b) with b broadcast over axis 1: d/db = sum of a rows
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.leaf(t(&[2, 1], &[2.0, 3.0]));
        let p = g.mul(a, b).unwrap();
        let s = g.sum_all(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(grads.get(a).unwrap().data(), &[2.0, 2.0, 2.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn reuse_accumulates_gradients() {
        // y = x + x -> dy/dx = 2
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.add(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn sum_squares_gradient() {
        // f(x) = sum x^2 at [1, 2] -> grad [2, 4]
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[0.0, 2.0]));
        let y = g.constant(t(&[2], &[0.0, 0.0]));
        let m = g.mse(x, y).unwrap();
        assert_eq!(g.value(m).item(), 2.0);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 2.0]);

        let z = g.leaf(t(&[3], &[0.0; 3]));
        assert!(g.mse(x, z).is_err());

        let mut g2 = Graph::new();
        let a = g2.leaf(t(&[4], &[1.0, -2.0, 0.5, 3.0]));
        let m2 = g2.mse(a, a).unwrap();
        assert_eq!(g2.value(m2).item(), 0.0);
    }

    #[test]
    fn clamp_passes_gradient_only_inside() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[0.5, 3.0, -1.0]));
        let c = g.clamp(x, 0.0, 1.0);
        assert_eq!(g.value(c).data(), &[0.5, 1.0, 0.0]);
        let s = g.sum_all(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_norm_standardizes_in_training() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let gamma = g.constant(t(&[1], &[1.0]));
        let beta = g.constant(t(&[1], &[0.0]));
        let y = g
            .batch_norm(x, gamma, beta, 1e-5, 0.9, BnMode::Train { running: None })
            .unwrap();
        let v = g.value(y).data();
        let mean: f64 = v.iter().sum::<f64>() / 6.0;
        let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4); // epsilon shrinks variance slightly
    }

    #[test]
    fn batch_norm_constant_channel_gives_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 2, 2], 7.0));
        let gamma = g.constant(t(&[1], &[1.0]));
        let beta = g.constant(t(&[1], &[0.0]));
        let y = g
            .batch_norm(x, gamma, beta, 1e-5, 0.9, BnMode::Train { running: None })
            .unwrap();
        assert!(g.value(y).data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn batch_norm_updates_running_stats() {
        let mut run = RunningStats::new(1);
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 4], &[1.0, 3.0, 5.0, 7.0])); // mean 4, var 5
        let gamma = g.constant(t(&[1], &[1.0]));
        let beta = g.constant(t(&[1], &[0.0]));
        g.batch_norm(x, gamma, beta, 1e-5, 0.9, BnMode::Train { running: Some(&mut run) })
            .unwrap();
        assert!((run.mean[0] - 0.4).abs() < 1e-12); // 0.9*0 + 0.1*4
        assert!((run.var[0] - (0.9 + 0.5)).abs() < 1e-12); // 0.9*1 + 0.1*5
    }

    #[test]
    fn lstm_zero_params_zero_state_gives_zero_output() {
        let mut g = Graph::new();
        let hidden = 4;
        let params = LstmParamNodes {
            w_x: g.leaf(Tensor::zeros(&[4 * hidden, 3])),
            w_h: g.leaf(Tensor::zeros(&[4 * hidden, hidden])),
            b: g.leaf(Tensor::zeros(&[4 * hidden])),
        };
        let x = g.constant(t(&[3], &[0.3, -0.2, 0.9]));
        let h = g.constant(Tensor::zeros(&[hidden]));
        let c = g.constant(Tensor::zeros(&[hidden]));
        let (h1, c1) = lstm_step(&mut g, x, (h, c), &params).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn select_cols_and_band_pool() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = g.select_cols(x, &[2, 0]).unwrap();
        assert_eq!(g.value(s).data(), &[3.0, 1.0, 6.0, 4.0]);
        let sum = g.sum_all(s);
        let grads = g.backward(sum).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.leaf(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.band_pool(x, &[(0, 1), (2, 2)]).unwrap();
        assert_eq!(g.value(b).data(), &[4.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn stack_cols_roundtrip() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1.0, 2.0]));
        let b = g.leaf(t(&[2], &[3.0, 4.0]));
        let m = g.stack_cols(&[a, b]).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 3.0, 2.0, 4.0]);
        let s = g.sum_all(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }
}
