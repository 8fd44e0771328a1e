//! Reverse-mode automatic differentiation over a linear op tape.
//!
//! Every primitive records its inputs and output value on the tape in
//! topological order; `backward` replays the tape once in reverse and
//! accumulates vector-Jacobian products into the `requires_grad`
//! leaves. A tape is consumed by its single backward pass.
//!
//! Kernels are sequential and accumulate reductions in f64, so a given
//! op sequence over the same inputs is bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::mathf;
use crate::tensor::{broadcast_shapes, reduce_to_shape, strides_for, zip_broadcast, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    Matmul { a: Var, b: Var },
    TransposeLast2 { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f32 },
    AddScalar { x: Var },
    Silu { x: Var },
    SoftmaxLastDim { x: Var },
    LayerNormLastDim { x: Var, eps: f32 },
    Rope { x: Var, cos: Vec<f32>, sin: Vec<f32> },
    SumAll { x: Var },
    IndexSelectRows { x: Var, indices: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::TransposeLast2 { .. } => "transpose",
            Op::Permute { .. } => "permute",
            Op::Reshape { .. } => "reshape",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Silu { .. } => "silu",
            Op::SoftmaxLastDim { .. } => "softmax_lastdim",
            Op::LayerNormLastDim { .. } => "layer_norm_lastdim",
            Op::Rope { .. } => "rope",
            Op::SumAll { .. } => "sum_all",
            Op::IndexSelectRows { .. } => "index_select_rows",
            Op::ConcatRows { .. } => "concat_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Linear record of primitive ops; one backward pass per tape.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    debug_checks: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            debug_checks: false,
        }
    }

    /// Enable per-op NaN/Inf detection (off by default; roughly 2x cost).
    pub fn with_debug_checks(mut self, on: bool) -> Self {
        self.debug_checks = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.debug_checks && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = match &op {
            Op::Leaf { requires_grad } => *requires_grad,
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::ConcatRows { parts } => parts.iter().any(|p| self.nodes[p.0].needs_grad),
            Op::TransposeLast2 { x }
            | Op::Permute { x, .. }
            | Op::Reshape { x }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Silu { x }
            | Op::SoftmaxLastDim { x, .. }
            | Op::LayerNormLastDim { x, .. }
            | Op::Rope { x, .. }
            | Op::SumAll { x }
            | Op::IndexSelectRows { x, .. } => self.nodes[x.0].needs_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Register a differentiable or frozen leaf value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { requires_grad })
            .expect("leaf push cannot fail without debug checks on non-finite input")
    }

    /// Register a frozen constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    // ── elementwise and structural ops ──────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let target = broadcast_shapes("add", self.shape(a), self.shape(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), &target, |x, y| x + y);
        self.push(out, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let target = broadcast_shapes("sub", self.shape(a), self.shape(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), &target, |x, y| x - y);
        self.push(out, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let target = broadcast_shapes("mul", self.shape(a), self.shape(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), &target, |x, y| x * y);
        self.push(out, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= c;
        }
        self.push(out, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Result<Var> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v += c;
        }
        self.push(out, Op::AddScalar { x })
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= mathf::sigmoid(*v);
        }
        self.push(out, Op::Silu { x })
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape { x })
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let out = transpose_last2_value(self.value(x))?;
        self.push(out, Op::TransposeLast2 { x })
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = permute_value(self.value(x), perm)?;
        self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        )
    }

    /// Select rows (axis 0) by index, in order; duplicates allowed.
    pub fn index_select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let out = index_select_value(self.value(x), indices)?;
        self.push(
            out,
            Op::IndexSelectRows {
                x,
                indices: indices.to_vec(),
            },
        )
    }

    /// Concatenate along axis 0; trailing dims must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(invalid("concat_rows", "no inputs"));
        }
        let rest = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != rest[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&rest);
        let out = Tensor::new(shape, data)?;
        self.push(
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum() as f32);
        self.push(out, Op::SumAll { x })
    }

    // ── fused numeric ops ───────────────────────────────────────────

    /// Batched matrix product with numpy-style broadcast on leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = batched_mm(self.value(a), self.value(b), MmMode::Nn)?;
        self.push(out, Op::Matmul { a, b })
    }

    /// Row-stable softmax over the last axis. `mask` (true = excluded)
    /// must have a length dividing the input length and aligns with the
    /// trailing elements; fully masked rows yield zeros.
    pub fn softmax_lastdim(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xs = self.value(x);
        if xs.ndim() == 0 || *xs.shape().last().unwrap() == 0 {
            return Err(invalid("softmax_lastdim", "empty last axis"));
        }
        if let Some(m) = mask {
            if m.is_empty() || xs.numel() % m.len() != 0 {
                return Err(invalid(
                    "softmax_lastdim",
                    "mask length must divide input length",
                ));
            }
        }
        let out = softmax_value(xs, mask);
        self.push(out, Op::SoftmaxLastDim { x })
    }

    /// Zero-mean unit-variance normalization over the last axis (no affine).
    pub fn layer_norm_lastdim(&mut self, x: Var, eps: f32) -> Result<Var> {
        let xs = self.value(x);
        if xs.ndim() == 0 {
            return Err(invalid("layer_norm_lastdim", "rank-0 input"));
        }
        let out = layer_norm_value(xs, eps);
        self.push(out, Op::LayerNormLastDim { x, eps })
    }

    /// Rotate adjacent feature pairs of `x: [n, heads, dh]` by per-token
    /// angles given as `cos`/`sin` tables of length `n * dh/2`; the same
    /// table applies to every head.
    pub fn rope(&mut self, x: Var, cos: &[f32], sin: &[f32]) -> Result<Var> {
        let xs = self.value(x);
        if xs.ndim() != 3 {
            return Err(invalid("rope", "expected [tokens, heads, head_dim]"));
        }
        let (n, _h, dh) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
        if dh % 2 != 0 || cos.len() != n * dh / 2 || sin.len() != cos.len() {
            return Err(invalid("rope", "phase table does not match input"));
        }
        let out = rope_value(xs, cos, sin, false);
        self.push(
            out,
            Op::Rope {
                x,
                cos: cos.to_vec(),
                sin: sin.to_vec(),
            },
        )
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Consumes the tape; gradients
    /// are populated for every `requires_grad` leaf (zeros if untouched).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        if self.value(loss).numel() != 1 {
            return Err(invalid(
                "backward",
                alloc::format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            match self.nodes[id].op.clone() {
                Op::Leaf { .. } => {
                    grads[id] = Some(gout);
                }
                Op::Matmul { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        let da = batched_mm(&gout, self.value(b), MmMode::Nt)?;
                        self.accumulate(&mut grads, a, reduce_to_shape(&da, self.shape(a)));
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = batched_mm(self.value(a), &gout, MmMode::Tn)?;
                        self.accumulate(&mut grads, b, reduce_to_shape(&db, self.shape(b)));
                    }
                }
                Op::TransposeLast2 { x } => {
                    self.accumulate(&mut grads, x, transpose_last2_value(&gout)?);
                }
                Op::Permute { x, perm } => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    self.accumulate(&mut grads, x, permute_value(&gout, &inv)?);
                }
                Op::Reshape { x } => {
                    let gx = gout.reshape(self.shape(x).to_vec())?;
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Add { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        self.accumulate(&mut grads, a, reduce_to_shape(&gout, self.shape(a)));
                    }
                    if self.nodes[b.0].needs_grad {
                        self.accumulate(&mut grads, b, reduce_to_shape(&gout, self.shape(b)));
                    }
                }
                Op::Sub { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        self.accumulate(&mut grads, a, reduce_to_shape(&gout, self.shape(a)));
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut neg = gout.clone();
                        for v in neg.data_mut() {
                            *v = -*v;
                        }
                        self.accumulate(&mut grads, b, reduce_to_shape(&neg, self.shape(b)));
                    }
                }
                Op::Mul { a, b } => {
                    let target = gout.shape().to_vec();
                    if self.nodes[a.0].needs_grad {
                        let da = zip_broadcast(&gout, self.value(b), &target, |g, y| g * y);
                        self.accumulate(&mut grads, a, reduce_to_shape(&da, self.shape(a)));
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = zip_broadcast(&gout, self.value(a), &target, |g, x| g * x);
                        self.accumulate(&mut grads, b, reduce_to_shape(&db, self.shape(b)));
                    }
                }
                Op::Scale { x, c } => {
                    let mut gx = gout;
                    for v in gx.data_mut() {
                        *v *= c;
                    }
                    self.accumulate(&mut grads, x, gx);
                }
                Op::AddScalar { x } => {
                    self.accumulate(&mut grads, x, gout);
                }
                Op::Silu { x } => {
                    let xs = self.value(x).data();
                    let mut gx = gout;
                    for (g, &xv) in gx.data_mut().iter_mut().zip(xs) {
                        let s = mathf::sigmoid(xv);
                        *g *= s * (1.0 + xv * (1.0 - s));
                    }
                    self.accumulate(&mut grads, x, gx);
                }
                Op::SoftmaxLastDim { x } => {
                    let y = &self.nodes[id].value;
                    let gx = softmax_backward(y, &gout);
                    self.accumulate(&mut grads, x, gx);
                }
                Op::LayerNormLastDim { x, eps } => {
                    let gx = layer_norm_backward(self.value(x), &gout, eps);
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Rope { x, cos, sin } => {
                    let gx = rope_value(&gout, &cos, &sin, true);
                    self.accumulate(&mut grads, x, gx);
                }
                Op::SumAll { x } => {
                    let g = gout.data()[0];
                    self.accumulate(&mut grads, x, Tensor::full(self.shape(x).to_vec(), g));
                }
                Op::IndexSelectRows { x, indices } => {
                    let mut gx = Tensor::zeros(self.shape(x).to_vec());
                    let row = self.shape(x)[1..].iter().product::<usize>();
                    for (i, &src) in indices.iter().enumerate() {
                        let from = &gout.data()[i * row..(i + 1) * row];
                        let to = &mut gx.data_mut()[src * row..(src + 1) * row];
                        for (t, f) in to.iter_mut().zip(from) {
                            *t += f;
                        }
                    }
                    self.accumulate(&mut grads, x, gx);
                }
                Op::ConcatRows { parts } => {
                    let rest: usize = gout.shape()[1..].iter().product();
                    let mut offset = 0;
                    for &p in &parts {
                        let rows = self.shape(p)[0];
                        let slice = gout.data()[offset..offset + rows * rest].to_vec();
                        offset += rows * rest;
                        if self.nodes[p.0].needs_grad {
                            let gp = Tensor::new(self.shape(p).to_vec(), slice)?;
                            self.accumulate(&mut grads, p, gp);
                        }
                    }
                }
            }
        }

        // Untouched requires_grad leaves get explicit zeros.
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { requires_grad: true }) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, add: Tensor) {
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, a) in existing.data_mut().iter_mut().zip(add.data()) {
                    *e += a;
                }
            }
            slot @ None => *slot = Some(add),
        }
    }
}

// ── kernels ─────────────────────────────────────────────────────────

#[derive(Clone, Copy)]
enum MmMode {
    /// a[m,k] @ b[k,n]
    Nn,
    /// a[m,n] @ b[k,n]^T -> [m,k]
    Nt,
    /// a[m,k]^T @ b[m,n] -> [k,n]
    Tn,
}

/// Batched matmul over the last two axes; leading axes broadcast.
fn batched_mm(a: &Tensor, b: &Tensor, mode: MmMode) -> Result<Tensor> {
    if a.ndim() < 2 || b.ndim() < 2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ar, ac) = (a.shape()[a.ndim() - 2], a.shape()[a.ndim() - 1]);
    let (br, bc) = (b.shape()[b.ndim() - 2], b.shape()[b.ndim() - 1]);
    let (m, k, n, out_rows, out_cols) = match mode {
        MmMode::Nn => {
            if ac != br {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            (ar, ac, bc, ar, bc)
        }
        MmMode::Nt => {
            if ac != bc {
                return Err(Error::ShapeMismatch {
                    op: "matmul_nt",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            (ar, ac, br, ar, br)
        }
        MmMode::Tn => {
            if ar != br {
                return Err(Error::ShapeMismatch {
                    op: "matmul_tn",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            (ar, ac, bc, ac, bc)
        }
    };
    let batch_a = &a.shape()[..a.ndim() - 2];
    let batch_b = &b.shape()[..b.ndim() - 2];
    let batch = broadcast_shapes("matmul", batch_a, batch_b)?;
    let nbatch: usize = batch.iter().product();

    let sa = crate::tensor::broadcast_strides(batch_a, &batch);
    let sb = crate::tensor::broadcast_strides(batch_b, &batch);
    let block_a = ar * ac;
    let block_b = br * bc;

    let mut out_shape = batch.clone();
    out_shape.push(out_rows);
    out_shape.push(out_cols);
    let mut out = vec![0.0f32; nbatch * out_rows * out_cols];

    let mut idx = vec![0usize; batch.len()];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    for bi in 0..nbatch {
        let av = &a.data()[off_a * block_a..off_a * block_a + block_a];
        let bv = &b.data()[off_b * block_b..off_b * block_b + block_b];
        let ov = &mut out[bi * out_rows * out_cols..(bi + 1) * out_rows * out_cols];
        match mode {
            MmMode::Nn => gemm_nn(av, bv, m, k, n, ov),
            MmMode::Nt => gemm_nt(av, bv, m, k, n, ov),
            MmMode::Tn => gemm_tn(av, bv, m, k, n, ov),
        }
        for axis in (0..batch.len()).rev() {
            idx[axis] += 1;
            off_a += sa[axis];
            off_b += sb[axis];
            if idx[axis] < batch[axis] {
                break;
            }
            idx[axis] = 0;
            off_a -= sa[axis] * batch[axis];
            off_b -= sb[axis] * batch[axis];
        }
    }
    Tensor::new(out_shape, out)
}

/// out[m,n] = a[m,k] @ b[k,n], f64 accumulation.
fn gemm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..k {
            let av = a[i * k + l] as f64;
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o += av * bv as f64;
            }
        }
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(acc.iter()) {
            *o = v as f32;
        }
    }
}

/// out[m,r] = a[m,k] @ b[r,k]^T. Materializes b^T so the inner loops
/// stream contiguously.
fn gemm_nt(a: &[f32], b: &[f32], m: usize, k: usize, r: usize, out: &mut [f32]) {
    let mut bt = vec![0.0f32; k * r];
    for j in 0..r {
        for l in 0..k {
            bt[l * r + j] = b[j * k + l];
        }
    }
    gemm_nn(a, &bt, m, k, r, out);
}

/// out[k,n] = a[m,k]^T @ b[m,n], f64 accumulation.
fn gemm_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l] as f64;
            let arow = &mut acc[l * n..(l + 1) * n];
            for (o, &bv) in arow.iter_mut().zip(brow) {
                *o += av * bv as f64;
            }
        }
    }
    for (o, &v) in out.iter_mut().zip(acc.iter()) {
        *o = v as f32;
    }
}

fn transpose_last2_value(x: &Tensor) -> Result<Tensor> {
    if x.ndim() < 2 {
        return Err(invalid("transpose", "needs at least two axes"));
    }
    let (r, c) = (x.shape()[x.ndim() - 2], x.shape()[x.ndim() - 1]);
    let batch: usize = x.shape()[..x.ndim() - 2].iter().product();
    let mut shape = x.shape().to_vec();
    shape.swap(x.ndim() - 2, x.ndim() - 1);
    let mut out = vec![0.0f32; x.numel()];
    for b in 0..batch {
        let src = &x.data()[b * r * c..(b + 1) * r * c];
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    Tensor::new(shape, out)
}

fn permute_value(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    if perm.len() != x.ndim() {
        return Err(invalid("permute", "perm length must equal rank"));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(invalid("permute", "perm must be a permutation"));
        }
        seen[p] = true;
    }
    // Fast path for the head split/merge pattern: swap the two leading
    // axes, inner rows stay contiguous.
    if perm == [1, 0, 2] {
        let (a, b, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = vec![0.0f32; x.numel()];
        for i in 0..a {
            for j in 0..b {
                let src = &x.data()[(i * b + j) * c..(i * b + j + 1) * c];
                out[(j * a + i) * c..(j * a + i + 1) * c].copy_from_slice(src);
            }
        }
        return Tensor::new(vec![b, a, c], out);
    }
    let old_strides = strides_for(x.shape());
    let new_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; new_shape.len()];
    for _ in 0..x.numel() {
        let mut off = 0;
        for (axis, &i) in idx.iter().enumerate() {
            off += i * old_strides[perm[axis]];
        }
        out.push(x.data()[off]);
        for axis in (0..new_shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < new_shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    Tensor::new(new_shape, out)
}

fn index_select_value(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if x.ndim() == 0 {
        return Err(invalid("index_select_rows", "rank-0 input"));
    }
    let rows = x.shape()[0];
    let row: usize = x.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        if i >= rows {
            return Err(invalid(
                "index_select_rows",
                alloc::format!("index {i} out of range for {rows} rows"),
            ));
        }
        data.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
    }
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(&x.shape()[1..]);
    Tensor::new(shape, data)
}

fn softmax_value(x: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let cols = *x.shape().last().unwrap();
    let rows = x.numel() / cols;
    let mut out = vec![0.0f32; x.numel()];
    let mlen = mask.map(|m| m.len()).unwrap_or(0);
    for r in 0..rows {
        let xs = &x.data()[r * cols..(r + 1) * cols];
        let masked = |j: usize| -> bool {
            match mask {
                Some(m) => m[(r * cols + j) % mlen],
                None => false,
            }
        };
        let mut max = f32::NEG_INFINITY;
        for (j, &v) in xs.iter().enumerate() {
            if !masked(j) && v > max {
                max = v;
            }
        }
        let dst = &mut out[r * cols..(r + 1) * cols];
        if max == f32::NEG_INFINITY {
            // Fully masked row: defined as all zeros.
            continue;
        }
        let mut denom = 0.0f64;
        for (j, &v) in xs.iter().enumerate() {
            if !masked(j) {
                let e = mathf::exp(v - max);
                dst[j] = e;
                denom += e as f64;
            }
        }
        let inv = 1.0 / denom;
        for d in dst.iter_mut() {
            *d = (*d as f64 * inv) as f32;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax preserves shape")
}

fn softmax_backward(y: &Tensor, gout: &Tensor) -> Tensor {
    let cols = *y.shape().last().unwrap();
    let rows = y.numel() / cols;
    let mut out = vec![0.0f32; y.numel()];
    for r in 0..rows {
        let ys = &y.data()[r * cols..(r + 1) * cols];
        let gs = &gout.data()[r * cols..(r + 1) * cols];
        let dot: f64 = ys
            .iter()
            .zip(gs)
            .map(|(&yv, &gv)| yv as f64 * gv as f64)
            .sum();
        for j in 0..cols {
            out[r * cols + j] = (ys[j] as f64 * (gs[j] as f64 - dot)) as f32;
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("shape preserved")
}

fn layer_norm_value(x: &Tensor, eps: f32) -> Tensor {
    let cols = *x.shape().last().unwrap();
    let rows = x.numel() / cols;
    let mut out = vec![0.0f32; x.numel()];
    for r in 0..rows {
        let xs = &x.data()[r * cols..(r + 1) * cols];
        let mean: f64 = xs.iter().map(|&v| v as f64).sum::<f64>() / cols as f64;
        let var: f64 = xs
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / cols as f64;
        let inv = 1.0 / crate::mathf::sqrt64(var + eps as f64);
        for j in 0..cols {
            out[r * cols + j] = ((xs[j] as f64 - mean) * inv) as f32;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

fn layer_norm_backward(x: &Tensor, gout: &Tensor, eps: f32) -> Tensor {
    let cols = *x.shape().last().unwrap();
    let rows = x.numel() / cols;
    let mut out = vec![0.0f32; x.numel()];
    for r in 0..rows {
        let xs = &x.data()[r * cols..(r + 1) * cols];
        let gs = &gout.data()[r * cols..(r + 1) * cols];
        let mean: f64 = xs.iter().map(|&v| v as f64).sum::<f64>() / cols as f64;
        let var: f64 = xs
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / cols as f64;
        let inv = 1.0 / crate::mathf::sqrt64(var + eps as f64);
        let mut gmean = 0.0f64;
        let mut gdot = 0.0f64;
        for j in 0..cols {
            let xhat = (xs[j] as f64 - mean) * inv;
            gmean += gs[j] as f64;
            gdot += gs[j] as f64 * xhat;
        }
        gmean /= cols as f64;
        gdot /= cols as f64;
        for j in 0..cols {
            let xhat = (xs[j] as f64 - mean) * inv;
            out[r * cols + j] = (inv * (gs[j] as f64 - gmean - xhat * gdot)) as f32;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Rotate adjacent pairs; `invert` applies the opposite angles.
fn rope_value(x: &Tensor, cos: &[f32], sin: &[f32], invert: bool) -> Tensor {
    let (n, h, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let pairs = dh / 2;
    let mut out = vec![0.0f32; x.numel()];
    for t in 0..n {
        for head in 0..h {
            let base = (t * h + head) * dh;
            for p in 0..pairs {
                let c = cos[t * pairs + p];
                let s = if invert { -sin[t * pairs + p] } else { sin[t * pairs + p] };
                let x0 = x.data()[base + 2 * p];
                let x1 = x.data()[base + 2 * p + 1];
                out[base + 2 * p] = x0 * c - x1 * s;
                out[base + 2 * p + 1] = x0 * s + x1 * c;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let b = tape.leaf(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_scalar_case() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1, 1], &[2.0]), false);
        let b = tape.leaf(t(&[1, 1], &[3.0]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]), false);
        let b = tape.leaf(Tensor::zeros(vec![4, 2]), false);
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        // Independent oracle: naive i-j-l loop in f64.
        let mut rng = crate::rng::SeedRng::new(7);
        let a = rng.uniform_tensor(&[4, 5], -1.0, 1.0);
        let b = rng.uniform_tensor(&[5, 3], -1.0, 1.0);
        let mut expect = vec![0.0f32; 12];
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0f64;
                for l in 0..5 {
                    acc += a.data()[i * 5 + l] as f64 * b.data()[l * 3 + j] as f64;
                }
                expect[i * 3 + j] = acc as f32;
            }
        }
        let mut tape = Tape::new();
        let av = tape.leaf(a, false);
        let bv = tape.leaf(b, false);
        let c = tape.matmul(av, bv).unwrap();
        for (got, want) in tape.value(c).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn batched_matmul_broadcasts_leading_dims() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let b = tape.leaf(t(&[2, 1], &[10.0, 100.0]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 1, 1]);
        assert_eq!(tape.value(c).data(), &[210.0, 430.0]);
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.0, 0.0, 0.0]), false);
        let y = tape.softmax_lastdim(x, None).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut tape = Tape::new().with_debug_checks(true);
        let x = tape.leaf(t(&[2], &[1000.0, 0.0]), false);
        let y = tape.softmax_lastdim(x, None).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 1.0).abs() < 1e-6);
        assert!(out[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_high_precision_recompute() {
        let mut rng = crate::rng::SeedRng::new(11);
        let x = rng.uniform_tensor(&[7], -4.0, 4.0);
        // Oracle: f64 softmax without max subtraction.
        let exps: Vec<f64> = x.data().iter().map(|&v| (v as f64).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let y = tape.softmax_lastdim(xv, None).unwrap();
        for (got, want) in tape.value(y).data().iter().zip(&exps) {
            assert!((*got as f64 - want / denom).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_empty_last_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 0]), false);
        assert!(tape.softmax_lastdim(x, None).is_err());
    }

    #[test]
    fn softmax_mask_excludes_entries_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[1.0, 2.0, 3.0, 4.0]), false);
        let y = tape
            .softmax_lastdim(x, Some(&[false, true, false, true]))
            .unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[1], 0.0);
        assert_eq!(out[3], 0.0);
        let denom = mathf::exp(1.0 - 3.0) + 1.0;
        assert!((out[2] - 1.0 / denom).abs() < 1e-6);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[5.0, -2.0, 0.5]), true);
        let loss = tape.sum_all(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[2.0, -1.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, -2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_consumes_tape() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0), true);
        let loss = tape.sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::TapeConsumed)));
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let unused = tape.leaf(t(&[3], &[0.0; 3]), true);
        let loss = tape.sum_all(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn debug_checks_flag_non_finite() {
        let mut tape = Tape::new().with_debug_checks(true);
        let x = tape.leaf(t(&[1], &[f32::MAX]), false);
        let doubled = tape.scale(x, 2.0);
        assert!(matches!(doubled, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn determinism_same_ops_bit_identical() {
        let run = || {
            let mut rng = crate::rng::SeedRng::new(3);
            let mut tape = Tape::new();
            let a = tape.leaf(rng.normal_tensor(&[4, 6]), false);
            let b = tape.leaf(rng.normal_tensor(&[6, 5]), false);
            let c = tape.matmul(a, b).unwrap();
            let s = tape.softmax_lastdim(c, None).unwrap();
            tape.value(s).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn concat_and_select_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let b = tape.leaf(t(&[1, 2], &[5.0, 6.0]), true);
        let c = tape.concat_rows(&[a, b]).unwrap();
        let back = tape.index_select_rows(c, &[2, 0, 1]).unwrap();
        assert_eq!(tape.value(back).data(), &[5.0, 6.0, 1.0, 2.0, 3.0, 4.0]);
        let loss = tape.sum_all(back).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0; 4]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0; 2]);
    }

    #[test]
    fn permute_roundtrips() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3, 2], &(0..12).map(|v| v as f32).collect::<Vec<_>>()), false);
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[2, 2, 3]);
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(x).data());
    }
}
