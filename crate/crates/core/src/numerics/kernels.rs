//! Forward kernels over plain tensors.
//!
//! These are the untracked versions of the differentiable operations; the
//! tape reuses them for its forward pass and adds the backward rules.
//! Every reduction runs sequentially in index order so results are
//! bitwise reproducible.

use crate::error::{Error, Result};

use super::Tensor;

/// Default base for rotary position angles.
pub const DEFAULT_ROPE_THETA: f64 = 10_000.0;

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * p..(k + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Matrix product `A[m×n] · B[n×p]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    let (n2, p) = b.dims2()?;
    if n != n2 {
        return Err(Error::dim(format!(
            "matmul of {:?} and {:?}: inner dimensions differ",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::from_parts(vec![m, p], matmul_raw(a.data(), b.data(), m, n, p)).ensure_finite("matmul")
}

/// `x[n×k] · wᵀ` for a weight stored as `w[d×k]` (output rows, input columns).
pub fn linear(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, k) = x.dims2()?;
    let (d, k2) = w.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "linear of input {:?} with weight {:?}: input width differs",
            x.shape(),
            w.shape()
        )));
    }
    let wt = transpose_raw(w.data(), d, k);
    Tensor::from_parts(vec![n, d], matmul_raw(x.data(), &wt, n, k, d)).ensure_finite("linear")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise softmax over the last dimension, shifted by the row maximum.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let c = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        softmax_in_place(row);
    }
    Tensor::from_parts(x.shape().to_vec(), out).ensure_finite("softmax_rows")
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `x · σ(x)`.
pub fn silu(x: &Tensor) -> Result<Tensor> {
    let out = x.data().iter().map(|&v| v * sigmoid(v)).collect();
    Tensor::from_parts(x.shape().to_vec(), out).ensure_finite("silu")
}

/// Root-mean-square normalization of every vector along the last
/// dimension, followed by an elementwise gain.
pub fn rmsnorm(x: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor> {
    rmsnorm_with_stats(x, gain, eps).map(|(t, _)| t)
}

/// Returns the normalized tensor and the per-vector `1/rms` factors.
pub(crate) fn rmsnorm_with_stats(
    x: &Tensor,
    gain: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>)> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::config(format!(
            "rmsnorm eps must be positive, got {eps}"
        )));
    }
    let d = x.last_dim();
    if gain.rank() != 1 || gain.len() != d {
        return Err(Error::dim(format!(
            "rmsnorm gain {:?} does not match last dimension of {:?}",
            gain.shape(),
            x.shape()
        )));
    }
    let g = gain.data();
    let mut out = Vec::with_capacity(x.len());
    let mut inv = Vec::with_capacity(x.outer_len());
    for row in x.data().chunks(d) {
        let mean_sq = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let r = 1.0 / (mean_sq + eps).sqrt();
        inv.push(r);
        out.extend(row.iter().zip(g).map(|(v, gi)| gi * v * r));
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out).ensure_finite("rmsnorm")?,
        inv,
    ))
}

pub(crate) fn check_rope_dims(head_dim: usize, theta_base: f64) -> Result<()> {
    if !head_dim.is_multiple_of(2) {
        return Err(Error::config(format!(
            "rotary embedding needs an even head dimension, got {head_dim}"
        )));
    }
    if theta_base.is_nan() || theta_base <= 0.0 {
        return Err(Error::config(format!(
            "rotary theta base must be positive, got {theta_base}"
        )));
    }
    Ok(())
}

/// Rotates consecutive pairs `(v[2i], v[2i+1])` by `sign · position · θᵢ`
/// with `θᵢ = theta_base^(−2i/len)`.
pub(crate) fn rotate_pairs(v: &mut [f64], position: usize, theta_base: f64, sign: f64) {
    let d = v.len();
    for i in 0..d / 2 {
        let freq = theta_base.powf(-2.0 * i as f64 / d as f64);
        let angle = sign * position as f64 * freq;
        let (s, c) = angle.sin_cos();
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}

/// Applies rotary position embedding at a single `position` to every
/// vector along the last dimension of `x` (the head dimension).
pub fn rope_apply(x: &Tensor, position: usize, theta_base: f64) -> Result<Tensor> {
    let d = x.last_dim();
    check_rope_dims(d, theta_base)?;
    let mut out = x.data().to_vec();
    for v in out.chunks_mut(d) {
        rotate_pairs(v, position, theta_base, 1.0);
    }
    Tensor::from_parts(x.shape().to_vec(), out).ensure_finite("rope_apply")
}

/// Numerically stable `log Σ exp(row)`.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let b = t(&[&[5.0], &[6.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &a).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(err.starts_with("dimension error"), "{err}");
    }

    #[test]
    fn linear_matches_matmul_with_transpose() {
        let x = t(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 2.0]]);
        let w = t(&[&[0.1, 0.2, 0.3], &[1.0, -1.0, 0.0]]);
        let expected = matmul(&x, &w.transpose().unwrap()).unwrap();
        assert_eq!(linear(&x, &w).unwrap(), expected);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&t(&[&[1000.0, 0.0]])).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);
        let s = softmax_rows(&t(&[&[1.0, 2.0]])).unwrap();
        // 1/(1+e) and e/(1+e)
        let e = std::f64::consts::E;
        assert!((s.data()[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((s.data()[0] - 0.26894).abs() < 1e-5);
        assert!((s.data()[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn silu_examples() {
        let s = silu(&Tensor::vector(vec![0.0, 1.0, -1000.0]).unwrap()).unwrap();
        assert_eq!(s.data()[0], 0.0);
        assert!((s.data()[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((s.data()[1] - 0.73106).abs() < 1e-5);
        assert!(s.data()[2].abs() < 1e-300 && !s.data()[2].is_nan());
    }

    #[test]
    fn rmsnorm_examples() {
        let ones = |n| Tensor::full(&[n], 1.0);
        let y = rmsnorm(&Tensor::full(&[4], 2.0), &ones(4), 1e-300).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let y = rmsnorm(&Tensor::vector(vec![3.0, 4.0]).unwrap(), &ones(2), 1e-300).unwrap();
        let rms = 12.5f64.sqrt();
        assert!((y.data()[0] - 3.0 / rms).abs() < 1e-15);
        assert!((y.data()[0] - 0.84853).abs() < 1e-5 && (y.data()[1] - 1.13137).abs() < 1e-5);
        let y = rmsnorm(&Tensor::zeros(&[3]), &ones(3), 1e-6).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        assert!(matches!(
            rmsnorm(&Tensor::zeros(&[3]), &ones(2), 1e-6),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rope_examples() {
        let x = t(&[&[0.3, -1.2, 2.0, 0.7]]);
        assert_eq!(rope_apply(&x, 0, DEFAULT_ROPE_THETA).unwrap(), x);
        let pair = Tensor::vector(vec![1.0, 0.0]).unwrap();
        for p in [1usize, 2, 7] {
            let y = rope_apply(&pair, p, 1.0).unwrap();
            assert!((y.data()[0] - (p as f64).cos()).abs() < 1e-15);
            assert!((y.data()[1] - (p as f64).sin()).abs() < 1e-15);
        }
        assert!(matches!(
            rope_apply(&Tensor::zeros(&[3]), 1, DEFAULT_ROPE_THETA),
            Err(Error::Config(_))
        ));
    }
}
