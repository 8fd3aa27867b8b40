//! Per-row numeric kernels.
//!
//! The tape and the incremental decoder both call these, row by row, so the
//! floating-point evaluation order is identical on both paths.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out[o] = bias[o] + sum_i weight[o, i] * x[i]` with `weight` row-major
/// `[out.len(), x.len()]`.
#[inline]
pub fn affine_row<T: Scalar>(weight: &[T], bias: Option<&[T]>, x: &[T], out: &mut [T]) {
    let n_in = x.len();
    debug_assert_eq!(weight.len(), n_in * out.len());
    for (o, slot) in out.iter_mut().enumerate() {
        let w = &weight[o * n_in..(o + 1) * n_in];
        let mut acc = bias.map_or(T::zero(), |b| b[o]);
        for (&wi, &xi) in w.iter().zip(x) {
            acc = acc + wi * xi;
        }
        *slot = acc;
    }
}

/// Gated linear unit on one row of length `2d`.
#[inline]
pub fn glu_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let d = out.len();
    debug_assert_eq!(x.len(), 2 * d);
    let (a, b) = x.split_at(d);
    for i in 0..d {
        out[i] = a[i] * sigmoid(b[i]);
    }
}

/// Softmax with max subtraction.
#[inline]
pub fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - m).exp();
        *o = e;
        sum = sum + e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

#[inline]
pub fn log_softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &v in x {
        sum = sum + (v - m).exp();
    }
    let log_z = m + sum.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - log_z;
    }
}

/// Scores of one query row against every row of `keys`.
#[inline]
pub fn dot_rows<T: Scalar>(query: &[T], keys: &Tensor<T>, out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (&q, &k) in query.iter().zip(keys.row(i)) {
            acc = acc + q * k;
        }
        *o = acc;
    }
}

/// `out = sum_i weights[i] * values.row(i)`.
#[inline]
pub fn weighted_sum_row<T: Scalar>(weights: &[T], values: &Tensor<T>, out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (i, &w) in weights.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(values.row(i)) {
            *o = *o + w * v;
        }
    }
}

/// `h + g c + (1 - g) o` for one row and a scalar gate.
#[inline]
pub fn gate_mix_row<T: Scalar>(h: &[T], c: &[T], o: &[T], g: T, out: &mut [T]) {
    let rest = T::one() - g;
    for k in 0..out.len() {
        out[k] = h[k] + g * c[k] + rest * o[k];
    }
}

#[inline]
pub fn add_row<T: Scalar>(a: &[T], b: &[T], out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

/// Concatenates the `k` input rows feeding output position `pos` into
/// `window`. Rows outside `0..rows` are the zero padding.
#[inline]
pub fn fill_window<T: Scalar>(
    input: &Tensor<T>,
    pos: usize,
    k: usize,
    left: usize,
    window: &mut [T],
) {
    let d = input.cols();
    let rows = input.rows();
    for s in 0..k {
        let dst = &mut window[s * d..(s + 1) * d];
        let src = (pos + s).checked_sub(left).filter(|&r| r < rows);
        match src {
            Some(r) => dst.copy_from_slice(input.row(r)),
            None => dst.iter_mut().for_each(|v| *v = T::zero()),
        }
    }
}

/// Zero padding around a sequence before a windowed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
}

impl Padding {
    /// Causal window over the `k` most recent positions.
    pub fn causal(k: usize) -> Self {
        Self {
            left: k.saturating_sub(1),
            right: 0,
        }
    }

    /// Window `i - k/2 + 1 ..= i + k/2` around position `i` (`k` entries).
    pub fn centered(k: usize) -> Self {
        Self {
            left: k.saturating_sub(1) / 2,
            right: k / 2,
        }
    }

    pub fn output_len(&self, len: usize, k: usize) -> Option<usize> {
        (len + self.left + self.right + 1).checked_sub(k).filter(|&n| n > 0)
    }
}

/// Gated linear unit on a vector: first half gated by the sigmoid of the
/// second half.
pub fn glu<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    if !x.len().is_multiple_of(2) || x.is_empty() {
        return Err(Error::shape(format!("glu needs an even, non-zero length, got {}", x.len())));
    }
    let mut out = vec![T::zero(); x.len() / 2];
    glu_row(x, &mut out);
    Ok(out)
}

pub fn softmax<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("softmax score {bad}")));
    }
    let mut out = vec![T::zero(); scores.len()];
    softmax_row(scores, &mut out);
    Ok(out)
}

/// Windowed 1-D convolution. `kernel` is `[d_out, k * d_in]`, the window is
/// laid out oldest position first.
pub fn conv1d_window<T: Scalar>(
    seq: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
    k: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let d_in = seq.cols();
    if k == 0 {
        return Err(Error::shape("kernel width must be at least 1"));
    }
    if kernel.shape() != [bias.len(), k * d_in] {
        return Err(Error::shape(format!(
            "kernel {:?} does not map {k}x{d_in} inputs to {} outputs",
            kernel.shape(),
            bias.len()
        )));
    }
    let out_len = padding.output_len(seq.rows(), k).ok_or_else(|| {
        Error::shape(format!(
            "window {k} longer than padded sequence of {}",
            seq.rows() + padding.left + padding.right
        ))
    })?;
    let d_out = bias.len();
    let mut out = Tensor::zeros(&[out_len, d_out]);
    let mut window = vec![T::zero(); k * d_in];
    for pos in 0..out_len {
        fill_window(seq, pos, k, padding.left, &mut window);
        affine_row(kernel.data(), Some(bias), &window, out.row_mut(pos));
    }
    Ok(out)
}
