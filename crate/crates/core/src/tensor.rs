//! Dense row-major tensors and the scalar-valued forward kernels shared by
//! the autodiff graph and the plain (no-gradient) code paths.

use crate::error::{Error, Result};
use num_traits::Float;

/// Scalar types the numeric core is generic over.
///
/// `f32` is the training precision, `f64` the gradient-check precision.
pub trait Scalar:
    Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// An n-dimensional grid of scalars in row-major order.
///
/// Tensors are plain values; gradient bookkeeping lives in
/// [`crate::autodiff::Graph`], which stores one gradient slot per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a shape and matching row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// First element; the conventional read-out for `[1]`-shaped results.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Casts elementwise into another scalar type through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }
}

fn check_chw<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects a C×H×W tensor, got {other:?}"
        ))),
    }
}

/// Numerically stable softmax along `axis`; every slice sums to one.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::InvalidArgument(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let shape = x.shape();
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![T::zero(); x.numel()];
    let data = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| o * axis_len * inner + a * inner + i;
            let mut max = T::neg_infinity();
            for a in 0..axis_len {
                max = max.max(data[at(a)]);
            }
            let mut sum = T::zero();
            for a in 0..axis_len {
                let e = (data[at(a)] - max).exp();
                out[at(a)] = e;
                sum = sum + e;
            }
            for a in 0..axis_len {
                out[at(a)] = out[at(a)] / sum;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Mean over non-overlapping `window`×`window` blocks of a C×H×W tensor.
pub fn window_avg_pool<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(x, "window_avg_pool")?;
    if window == 0 {
        return Err(Error::InvalidArgument("pooling window must be positive".into()));
    }
    if h % window != 0 || w % window != 0 {
        return Err(Error::InvalidArgument(format!(
            "window {window} does not divide spatial extents {h}×{w}"
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let inv = T::from_f64(1.0 / (window * window) as f64);
    let mut out = vec![T::zero(); c * oh * ow];
    let data = x.data();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for ky in 0..window {
                    for kx in 0..window {
                        s = s + data[ci * h * w + (oy * window + ky) * w + ox * window + kx];
                    }
                }
                out[ci * oh * ow + oy * ow + ox] = s * inv;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Repeats every cell of a C×h×w tensor into a `window`×`window` block.
/// Inverse direction of [`window_avg_pool`] for projection-style tests.
pub fn repeat_upsample<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(x, "repeat_upsample")?;
    let (oh, ow) = (h * window, w * window);
    let mut out = vec![T::zero(); c * oh * ow];
    let data = x.data();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[ci * oh * ow + oy * ow + ox] = data[ci * h * w + (oy / window) * w + ox / window];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Source coordinate for corner-aligned interpolation: endpoints map to
/// endpoints, a single output sample maps to index 0.
fn corner_coord(i: usize, out_len: usize, in_len: usize) -> f64 {
    if out_len <= 1 {
        0.0
    } else {
        i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    }
}

/// Per-axis interpolation stencil: (low index, high index, high weight).
fn bilinear_stencil(i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let src = corner_coord(i, out_len, in_len);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Corner-aligned bilinear resize of a C×H×W tensor.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(x, "bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(
            "resize target extents must be positive".into(),
        ));
    }
    if out_h == h && out_w == w {
        return Ok(x.clone());
    }
    let mut out = vec![T::zero(); c * out_h * out_w];
    let data = x.data();
    for oy in 0..out_h {
        let (y0, y1, fy) = bilinear_stencil(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = bilinear_stencil(ox, out_w, w);
            let (w00, w01, w10, w11) = (
                (1.0 - fy) * (1.0 - fx),
                (1.0 - fy) * fx,
                fy * (1.0 - fx),
                fy * fx,
            );
            for ci in 0..c {
                let base = ci * h * w;
                let v = data[base + y0 * w + x0].as_f64() * w00
                    + data[base + y0 * w + x1].as_f64() * w01
                    + data[base + y1 * w + x0].as_f64() * w10
                    + data[base + y1 * w + x1].as_f64() * w11;
                out[ci * out_h * out_w + oy * out_w + ox] = T::from_f64(v);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// 2-D cross-correlation with zero padding: x C_in×H×W, w C_out×C_in×kh×kw.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (cin, h, w) = check_chw(x, "conv2d input")?;
    let (cout, wcin, kh, kw) = match weight.shape() {
        [a, b, c, d] => (*a, *b, *c, *d),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "conv2d weight must be Cout×Cin×kh×kw, got {other:?}"
            )))
        }
    };
    if wcin != cin {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: input has {cin} channels, weight expects {wcin}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias must be [{cout}], got {:?}",
                b.shape()
            )));
        }
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![T::zero(); cout * oh * ow];
    let xd = x.data();
    let wd = weight.data();
    for oc in 0..cout {
        let b = bias.map_or(T::zero(), |b| b.data()[oc]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b;
                for ic in 0..cin {
                    let xbase = ic * h * w;
                    let wbase = oc * cin * kh * kw + ic * kh * kw;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc = acc
                                + xd[xbase + iy as usize * w + ix as usize]
                                    * wd[wbase + ky * kw + kx];
                        }
                    }
                }
                out[oc * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![cout, oh, ow], out)
}

/// Row-major 2-D matrix product.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "matmul lhs must be 2-D, got {other:?}"
            )))
        }
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "matmul rhs must be 2-D, got {other:?}"
            )))
        }
    };
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dimensions disagree: {k} vs {k2}"
        )));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// 2-D transpose.
pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = match a.shape() {
        [m, n] => (*m, *n),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "transpose expects 2-D, got {other:?}"
            )))
        }
    };
    let ad = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Reorders a C×h×w tensor into an (h·w)×C token matrix.
pub fn chw_to_tokens<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(x, "chw_to_tokens")?;
    let n = h * w;
    let mut out = vec![T::zero(); n * c];
    let data = x.data();
    for ci in 0..c {
        for t in 0..n {
            out[t * c + ci] = data[ci * n + t];
        }
    }
    Tensor::new(vec![n, c], out)
}

/// GELU under the tanh approximation.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

/// Derivative of the tanh-approximated GELU, consistent with its forward.
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    let dinner = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * sech2 * dinner
}

/// Numerically stable logistic function. The two branches are exact
/// complements: `sigmoid(x) + sigmoid(-x)` is exactly one, which the
/// pairwise-preference identities rely on.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        let e = x.exp();
        e / (T::one() + e)
    } else {
        let e = (-x).exp();
        T::one() - e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_symmetry_and_analytic() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 1.0]);
        let s = softmax(&x, 0).unwrap();
        assert!(close(s.data()[0], 0.5, 1e-12));
        assert!(close(s.data()[1], 0.5, 1e-12));

        let x = Tensor::<f64>::from_vec(vec![0.0, 3f64.ln()]);
        let s = softmax(&x, 0).unwrap();
        assert!(close(s.data()[0], 0.25, 1e-12));
        assert!(close(s.data()[1], 0.75, 1e-12));
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tensor::<f64>::from_vec(vec![0.3, -1.2, 2.5, 0.0]);
        let c = 7.25;
        let shifted = x.map(|v| v + c);
        let a = softmax(&x, 0).unwrap();
        let b = softmax(&shifted, 0).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!(close(*u, *v, 1e-12));
        }
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0]);
        assert!(matches!(softmax(&x, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pool_constant_and_ramp() {
        let c = Tensor::<f64>::full(vec![2, 4, 4], 3.5);
        let p = window_avg_pool(&c, 2).unwrap();
        assert_eq!(p.shape(), &[2, 2, 2]);
        assert!(p.iter().all(|&v| close(v, 3.5, 1e-12)));

        // 2x2 -> single mean
        let x = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = window_avg_pool(&x, 2).unwrap();
        assert!(close(p.data()[0], 2.5, 1e-12));

        // 4x4 ramp, window 2: brute-force block means
        let x = Tensor::<f64>::new(vec![1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let p = window_avg_pool(&x, 2).unwrap();
        assert_eq!(p.data(), &[2.5, 4.5, 10.5, 12.5]);

        // window 1 is the identity
        let p = window_avg_pool(&x, 1).unwrap();
        assert_eq!(p.data(), x.data());
    }

    #[test]
    fn pool_rejects_non_divisible() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 4]);
        assert!(matches!(
            window_avg_pool(&x, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn pooling_is_a_projection() {
        // pool -> upsample -> pool equals a single pool
        let data: Vec<f64> = (0..32).map(|v| (v as f64 * 0.37).sin()).collect();
        let x = Tensor::new(vec![2, 4, 4], data).unwrap();
        let once = window_avg_pool(&x, 2).unwrap();
        let up = repeat_upsample(&once, 2).unwrap();
        let twice = window_avg_pool(&up, 2).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn resize_identity_constant_and_hand_case() {
        let x = Tensor::<f64>::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let same = bilinear_resize(&x, 2, 3).unwrap();
        assert_eq!(same.data(), x.data());

        let c = Tensor::<f64>::full(vec![2, 3, 3], 0.7);
        let r = bilinear_resize(&c, 5, 4).unwrap();
        assert!(r.iter().all(|&v| close(v, 0.7, 1e-12)));

        // 1x1x2 row [0, 1] -> 1x1x3 row [0, 0.5, 1] under corner alignment
        let x = Tensor::<f64>::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        let r = bilinear_resize(&x, 1, 3).unwrap();
        assert_eq!(r.shape(), &[1, 1, 3]);
        assert!(close(r.data()[0], 0.0, 1e-12));
        assert!(close(r.data()[1], 0.5, 1e-12));
        assert!(close(r.data()[2], 1.0, 1e-12));
    }

    #[test]
    fn resize_rejects_zero_target() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 2]);
        assert!(bilinear_resize(&x, 0, 2).is_err());
    }

    #[test]
    fn conv2d_hand_case() {
        // 1 channel 3x3 input, 1x1x2x2 kernel of ones, stride 1, no padding:
        // each output is the window sum.
        let x = Tensor::<f64>::new(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);

        // stride 2 with padding 1 on 4x4 halves the extent
        let x = Tensor::<f64>::zeros(vec![1, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![3, 1, 3, 3]);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Tensor::<f64>::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::<f64>::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        let t = transpose(&a).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn tokens_roundtrip_layout() {
        let x = Tensor::<f64>::new(vec![2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let t = chw_to_tokens(&x).unwrap();
        assert_eq!(t.shape(), &[4, 2]);
        // token 0 = (x[c=0,0,0], x[c=1,0,0]) = (0, 4)
        assert_eq!(t.data(), &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    }
}
