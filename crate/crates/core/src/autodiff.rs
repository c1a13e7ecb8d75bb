//! Reverse-mode differentiation over a per-pass computation graph.
//!
//! A [`Graph`] records every operation as a node holding the forward value;
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into leaf slots (always summed, never overwritten). Graphs are built
//! fresh for each forward pass; parameters live outside the graph in a
//! [`crate::params::ParamStore`] and enter as leaves.
//!
//! The primitive set is exactly what the model needs: dense maps, strided
//! zero-padded convolution, sigmoid / GELU / ReLU, softmax, window average
//! pooling, bilinear resize, channel concatenation, elementwise arithmetic
//! and mean/sum reductions, plus the token reshuffles used by attention.

use crate::error::{Error, Result};
use crate::tensor::{
    self, gelu_grad_scalar, gelu_scalar, sigmoid_scalar, Scalar, Tensor,
};

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Abs(Var),
    Scale(Var),
    Relu(Var),
    Sigmoid(Var),
    Gelu(Var),
    Sqrt(Var),
    Softmax { x: Var, axis: usize },
    CumSumLast(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow { x: Var, bias: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize },
    AvgPool { x: Var, window: usize },
    Resize(Var),
    ConcatChannels(Vec<Var>),
    MulMask { mask: Var, x: Var },
    ChwToTokens(Var),
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    // true when this node or anything under it requires gradients
    needs_grad: bool,
    op: Op,
    // constant factor for Scale
    scale: T,
}

/// One forward/backward pass worth of tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. Gradients accumulate into it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Inserts a non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a node after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
            scale: T::one(),
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn any_needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.needs(v))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let data: Vec<T> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data).expect("zip_map shape"), op, needs)
    }

    fn unary_map(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.nodes[a.0].value.map(&f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary_map(a, Op::Abs(a), |x| x.abs())
    }

    /// Multiplication by a compile-time constant (not differentiated w.r.t. c).
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.unary_map(a, Op::Scale(a), |x| x * c);
        self.nodes[v.0].scale = c;
        v
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary_map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary_map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary_map(a, Op::Gelu(a), gelu_scalar)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary_map(a, Op::Sqrt(a), |x| x.sqrt())
    }

    // ── structured ops ──────────────────────────────────────────────

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = tensor::softmax(&self.nodes[a.0].value, axis)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Softmax { x: a, axis }, needs))
    }

    /// Inclusive prefix sums along the last axis.
    pub fn cumsum_last(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let k = *shape.last().expect("cumsum on rank >= 1");
        let rows = self.nodes[a.0].value.numel() / k;
        let src = self.nodes[a.0].value.data();
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let mut acc = T::zero();
            for j in 0..k {
                acc = acc + src[r * k + j];
                out[r * k + j] = acc;
            }
        }
        let needs = self.needs(a);
        self.push(
            Tensor::new(shape, out).expect("cumsum shape"),
            Op::CumSumLast(a),
            needs,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = tensor::transpose(&self.nodes[a.0].value)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Transpose(a), needs))
    }

    /// Adds a `[D]` bias row to every row of an `[N, D]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = match self.shape(x) {
            [n, d] => (*n, *d),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "add_row input must be 2-D, got {other:?}"
                )))
            }
        };
        if self.shape(bias) != [d] {
            return Err(Error::ShapeMismatch(format!(
                "add_row bias must be [{d}], got {:?}",
                self.shape(bias)
            )));
        }
        let xd = self.nodes[x.0].value.data();
        let bd = self.nodes[bias.0].value.data();
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = xd[i * d + j] + bd[j];
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(
            Tensor::new(vec![n, d], out).expect("add_row shape"),
            Op::AddRow { x, bias },
            needs,
        ))
    }

    /// Affine map on token rows: `x[N,I] @ w[I,O] + b[O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = tensor::conv2d(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|b| &self.nodes[b.0].value),
            stride,
            padding,
        )?;
        let mut needs = self.needs(x) || self.needs(w);
        if let Some(b) = b {
            needs = needs || self.needs(b);
        }
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, padding }, needs))
    }

    pub fn window_avg_pool(&mut self, x: Var, window: usize) -> Result<Var> {
        let value = tensor::window_avg_pool(&self.nodes[x.0].value, window)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::AvgPool { x, window }, needs))
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = tensor::bilinear_resize(&self.nodes[x.0].value, out_h, out_w)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Resize(x), needs))
    }

    /// Concatenates C×H×W tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (first_h, first_w) = match self.shape(xs[0]) {
            [_, h, w] => (*h, *w),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "concat_channels expects C×H×W tensors, got {other:?}"
                )))
            }
        };
        let mut channels = 0usize;
        let mut data = Vec::new();
        for &v in xs {
            match self.shape(v) {
                [c, h, w] if *h == first_h && *w == first_w => channels += *c,
                other => {
                    return Err(Error::ShapeMismatch(format!(
                        "concat_channels operand {other:?} does not match {first_h}×{first_w}"
                    )))
                }
            }
            data.extend_from_slice(self.nodes[v.0].value.data());
        }
        let needs = self.any_needs(xs);
        Ok(self.push(
            Tensor::new(vec![channels, first_h, first_w], data)?,
            Op::ConcatChannels(xs.to_vec()),
            needs,
        ))
    }

    /// Broadcasts a single-channel `[1,H,W]` mask over every channel of `x`.
    pub fn mul_mask(&mut self, mask: Var, x: Var) -> Result<Var> {
        let (h, w) = match self.shape(mask) {
            [1, h, w] => (*h, *w),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "mask must be 1×H×W, got {other:?}"
                )))
            }
        };
        let c = match self.shape(x) {
            [c, xh, xw] if *xh == h && *xw == w => *c,
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "mul_mask operand {other:?} does not match mask {h}×{w}"
                )))
            }
        };
        let md = self.nodes[mask.0].value.data();
        let xd = self.nodes[x.0].value.data();
        let hw = h * w;
        let mut out = vec![T::zero(); c * hw];
        for ci in 0..c {
            for p in 0..hw {
                out[ci * hw + p] = md[p] * xd[ci * hw + p];
            }
        }
        let needs = self.needs(mask) || self.needs(x);
        Ok(self.push(
            Tensor::new(vec![c, h, w], out)?,
            Op::MulMask { mask, x },
            needs,
        ))
    }

    /// `[C,h,w]` -> `[h·w, C]` token matrix.
    pub fn chw_to_tokens(&mut self, x: Var) -> Result<Var> {
        let value = tensor::chw_to_tokens(&self.nodes[x.0].value)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::ChwToTokens(x), needs))
    }

    /// Columns `[start, start+len)` of an `[N, D]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = match self.shape(x) {
            [n, d] => (*n, *d),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "slice_cols expects 2-D, got {other:?}"
                )))
            }
        };
        if start + len > d || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "column slice {start}..{} out of range for width {d}",
                start + len
            )));
        }
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); n * len];
        for i in 0..n {
            out[i * len..(i + 1) * len].copy_from_slice(&xd[i * d + start..i * d + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, len], out)?,
            Op::SliceCols { x, start, len },
            needs,
        ))
    }

    /// Concatenates `[N, D_i]` matrices along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let n = match self.shape(xs[0]) {
            [n, _] => *n,
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "concat_cols expects 2-D, got {other:?}"
                )))
            }
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            match self.shape(v) {
                [rows, d] if *rows == n => widths.push(*d),
                other => {
                    return Err(Error::ShapeMismatch(format!(
                        "concat_cols operand {other:?} does not have {n} rows"
                    )))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); n * total];
        let mut offset = 0;
        for (&v, &dv) in xs.iter().zip(&widths) {
            let xd = self.nodes[v.0].value.data();
            for i in 0..n {
                out[i * total + offset..i * total + offset + dv]
                    .copy_from_slice(&xd[i * dv..(i + 1) * dv]);
            }
            offset += dv;
        }
        let needs = self.any_needs(xs);
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::ConcatCols(xs.to_vec()),
            needs,
        ))
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.nodes[x.0].value.data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel();
        let s: T = self.nodes[x.0].value.data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(
            Tensor::scalar(s / T::from_f64(n as f64)),
            Op::MeanAll(x),
            needs,
        )
    }

    /// Token-average pooling: `[N, D]` -> `[1, D]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = match self.shape(x) {
            [n, d] => (*n, *d),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "mean_rows expects 2-D, got {other:?}"
                )))
            }
        };
        let xd = self.nodes[x.0].value.data();
        let inv = T::from_f64(1.0 / n as f64);
        let mut out = vec![T::zero(); d];
        for i in 0..n {
            for j in 0..d {
                out[j] = out[j] + xd[i * d + j];
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![1, d], out)?,
            Op::MeanRows(x),
            needs,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    fn add_grad(&mut self, v: Var, delta: &[T]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        let slot = self.nodes[v.0]
            .grad
            .get_or_insert_with(|| vec![T::zero(); numel]);
        for (g, d) in slot.iter_mut().zip(delta) {
            *g = *g + *d;
        }
    }

    /// Seeds the scalar `loss` node with gradient one and propagates the
    /// chain rule back to every leaf that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward expects a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].value.item().is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.clone() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.add_grad(a, &grad);
                    self.add_grad(b, &grad);
                }
                Op::Sub(a, b) => {
                    self.add_grad(a, &grad);
                    let neg: Vec<T> = grad.iter().map(|&g| -g).collect();
                    self.add_grad(b, &neg);
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let da: Vec<T> = grad
                            .iter()
                            .zip(self.nodes[b.0].value.data())
                            .map(|(&g, &y)| g * y)
                            .collect();
                        self.add_grad(a, &da);
                    }
                    if self.needs(b) {
                        let db: Vec<T> = grad
                            .iter()
                            .zip(self.nodes[a.0].value.data())
                            .map(|(&g, &x)| g * x)
                            .collect();
                        self.add_grad(b, &db);
                    }
                }
                Op::Abs(a) => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &x)| {
                            if x > T::zero() {
                                g
                            } else if x < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::Scale(a) => {
                    let c = self.nodes[idx].scale;
                    let da: Vec<T> = grad.iter().map(|&g| g * c).collect();
                    self.add_grad(a, &da);
                }
                Op::Relu(a) => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::Sigmoid(a) => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[idx].value.data())
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::Gelu(a) => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(&g, &x)| g * gelu_grad_scalar(x))
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::Sqrt(a) => {
                    // subgradient 0 at the origin keeps losses with an exact
                    // zero root finite
                    let two = T::from_f64(2.0);
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[idx].value.data())
                        .map(|(&g, &s)| {
                            if s == T::zero() {
                                T::zero()
                            } else {
                                g / (two * s)
                            }
                        })
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::Softmax { x, axis } => {
                    let out = self.nodes[idx].value.clone();
                    let shape = out.shape();
                    let axis_len = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let od = out.data();
                    let mut dx = vec![T::zero(); od.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| o * axis_len * inner + a * inner + i;
                            let mut dot = T::zero();
                            for a in 0..axis_len {
                                dot = dot + grad[at(a)] * od[at(a)];
                            }
                            for a in 0..axis_len {
                                dx[at(a)] = od[at(a)] * (grad[at(a)] - dot);
                            }
                        }
                    }
                    self.add_grad(x, &dx);
                }
                Op::CumSumLast(a) => {
                    let shape = self.shape(a).to_vec();
                    let k = *shape.last().unwrap();
                    let rows = grad.len() / k;
                    let mut dx = vec![T::zero(); grad.len()];
                    for r in 0..rows {
                        let mut acc = T::zero();
                        for j in (0..k).rev() {
                            acc = acc + grad[r * k + j];
                            dx[r * k + j] = acc;
                        }
                    }
                    self.add_grad(a, &dx);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    let g = Tensor::new(vec![m, n], grad.clone()).expect("grad shape");
                    if self.needs(a) {
                        let bt = tensor::transpose(&self.nodes[b.0].value).unwrap();
                        let da = tensor::matmul(&g, &bt).unwrap();
                        self.add_grad(a, da.data());
                    }
                    if self.needs(b) {
                        let at = tensor::transpose(&self.nodes[a.0].value).unwrap();
                        let db = tensor::matmul(&at, &g).unwrap();
                        debug_assert_eq!(db.shape(), [k, n]);
                        self.add_grad(b, db.data());
                    }
                }
                Op::Transpose(a) => {
                    let shape = self.shape(idx_var(idx)).to_vec();
                    let g = Tensor::new(shape, grad.clone()).expect("grad shape");
                    let da = tensor::transpose(&g).unwrap();
                    self.add_grad(a, da.data());
                }
                Op::AddRow { x, bias } => {
                    self.add_grad(x, &grad);
                    if self.needs(bias) {
                        let d = self.shape(bias)[0];
                        let n = grad.len() / d;
                        let mut db = vec![T::zero(); d];
                        for i in 0..n {
                            for j in 0..d {
                                db[j] = db[j] + grad[i * d + j];
                            }
                        }
                        self.add_grad(bias, &db);
                    }
                }
                Op::Conv2d { x, w, b, stride, padding } => {
                    self.conv2d_backward(idx, x, w, b, stride, padding, &grad);
                }
                Op::AvgPool { x, window } => {
                    let (c, h, w) = dims3(self.shape(x));
                    let (oh, ow) = (h / window, w / window);
                    let inv = T::from_f64(1.0 / (window * window) as f64);
                    let mut dx = vec![T::zero(); c * h * w];
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad[ci * oh * ow + oy * ow + ox] * inv;
                                for ky in 0..window {
                                    for kx in 0..window {
                                        dx[ci * h * w
                                            + (oy * window + ky) * w
                                            + (ox * window + kx)] = g;
                                    }
                                }
                            }
                        }
                    }
                    self.add_grad(x, &dx);
                }
                Op::Resize(x) => {
                    let (c, h, w) = dims3(self.shape(x));
                    let (oc, oh, ow) = dims3(self.shape(idx_var(idx)));
                    debug_assert_eq!(c, oc);
                    let mut dx = vec![T::zero(); c * h * w];
                    if oh == h && ow == w {
                        dx.copy_from_slice(&grad);
                    } else {
                        for oy in 0..oh {
                            let (y0, y1, fy) = stencil(oy, oh, h);
                            for ox in 0..ow {
                                let (x0, x1, fx) = stencil(ox, ow, w);
                                let w00 = T::from_f64((1.0 - fy) * (1.0 - fx));
                                let w01 = T::from_f64((1.0 - fy) * fx);
                                let w10 = T::from_f64(fy * (1.0 - fx));
                                let w11 = T::from_f64(fy * fx);
                                for ci in 0..c {
                                    let g = grad[ci * oh * ow + oy * ow + ox];
                                    let base = ci * h * w;
                                    dx[base + y0 * w + x0] = dx[base + y0 * w + x0] + g * w00;
                                    dx[base + y0 * w + x1] = dx[base + y0 * w + x1] + g * w01;
                                    dx[base + y1 * w + x0] = dx[base + y1 * w + x0] + g * w10;
                                    dx[base + y1 * w + x1] = dx[base + y1 * w + x1] + g * w11;
                                }
                            }
                        }
                    }
                    self.add_grad(x, &dx);
                }
                Op::ConcatChannels(xs) => {
                    let mut offset = 0;
                    for v in xs {
                        let numel = self.nodes[v.0].value.numel();
                        let piece: Vec<T> = grad[offset..offset + numel].to_vec();
                        self.add_grad(v, &piece);
                        offset += numel;
                    }
                }
                Op::MulMask { mask, x } => {
                    let (c, h, w) = dims3(self.shape(x));
                    let hw = h * w;
                    if self.needs(mask) {
                        let xd = self.nodes[x.0].value.data();
                        let mut dm = vec![T::zero(); hw];
                        for ci in 0..c {
                            for p in 0..hw {
                                dm[p] = dm[p] + grad[ci * hw + p] * xd[ci * hw + p];
                            }
                        }
                        self.add_grad(mask, &dm);
                    }
                    if self.needs(x) {
                        let md = self.nodes[mask.0].value.data();
                        let mut dx = vec![T::zero(); c * hw];
                        for ci in 0..c {
                            for p in 0..hw {
                                dx[ci * hw + p] = grad[ci * hw + p] * md[p];
                            }
                        }
                        self.add_grad(x, &dx);
                    }
                }
                Op::ChwToTokens(x) => {
                    let (c, h, w) = dims3(self.shape(x));
                    let n = h * w;
                    let mut dx = vec![T::zero(); c * n];
                    for ci in 0..c {
                        for t in 0..n {
                            dx[ci * n + t] = grad[t * c + ci];
                        }
                    }
                    self.add_grad(x, &dx);
                }
                Op::SliceCols { x, start, len } => {
                    let (n, d) = (self.shape(x)[0], self.shape(x)[1]);
                    let mut dx = vec![T::zero(); n * d];
                    for i in 0..n {
                        dx[i * d + start..i * d + start + len]
                            .copy_from_slice(&grad[i * len..(i + 1) * len]);
                    }
                    self.add_grad(x, &dx);
                }
                Op::ConcatCols(xs) => {
                    let total = self.shape(idx_var(idx))[1];
                    let n = self.shape(idx_var(idx))[0];
                    let mut offset = 0;
                    for v in xs {
                        let dv = self.shape(v)[1];
                        let mut piece = vec![T::zero(); n * dv];
                        for i in 0..n {
                            piece[i * dv..(i + 1) * dv]
                                .copy_from_slice(&grad[i * total + offset..i * total + offset + dv]);
                        }
                        self.add_grad(v, &piece);
                        offset += dv;
                    }
                }
                Op::SumAll(x) => {
                    let n = self.nodes[x.0].value.numel();
                    let dx = vec![grad[0]; n];
                    self.add_grad(x, &dx);
                }
                Op::MeanAll(x) => {
                    let n = self.nodes[x.0].value.numel();
                    let dx = vec![grad[0] / T::from_f64(n as f64); n];
                    self.add_grad(x, &dx);
                }
                Op::MeanRows(x) => {
                    let (n, d) = (self.shape(x)[0], self.shape(x)[1]);
                    let inv = T::from_f64(1.0 / n as f64);
                    let mut dx = vec![T::zero(); n * d];
                    for i in 0..n {
                        for j in 0..d {
                            dx[i * d + j] = grad[j] * inv;
                        }
                    }
                    self.add_grad(x, &dx);
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &mut self,
        out: usize,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        grad: &[T],
    ) {
        let (cin, h, wid) = dims3(self.shape(x));
        let wshape = self.shape(w).to_vec();
        let (cout, kh, kw) = (wshape[0], wshape[2], wshape[3]);
        let (oh, ow) = {
            let s = self.shape(idx_var(out));
            (s[1], s[2])
        };
        let need_x = self.needs(x);
        let need_w = self.needs(w);
        let xd = self.nodes[x.0].value.data().to_vec();
        let wd = self.nodes[w.0].value.data().to_vec();
        let mut dx = vec![T::zero(); cin * h * wid];
        let mut dw = vec![T::zero(); wd.len()];
        for oc in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad[oc * oh * ow + oy * ow + ox];
                    for ic in 0..cin {
                        let xbase = ic * h * wid;
                        let wbase = oc * cin * kh * kw + ic * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                let xi = xbase + iy as usize * wid + ix as usize;
                                let wi = wbase + ky * kw + kx;
                                if need_x {
                                    dx[xi] = dx[xi] + g * wd[wi];
                                }
                                if need_w {
                                    dw[wi] = dw[wi] + g * xd[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        if need_x {
            self.add_grad(x, &dx);
        }
        if need_w {
            self.add_grad(w, &dw);
        }
        if let Some(b) = b {
            if self.needs(b) {
                let mut db = vec![T::zero(); cout];
                for oc in 0..cout {
                    for p in 0..oh * ow {
                        db[oc] = db[oc] + grad[oc * oh * ow + p];
                    }
                }
                self.add_grad(b, &db);
            }
        }
    }
}

fn idx_var(i: usize) -> Var {
    Var(i)
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

fn stencil(i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let src = if out_len <= 1 {
        0.0
    } else {
        i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    };
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}
