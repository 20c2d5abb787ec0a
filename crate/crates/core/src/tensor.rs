//! Dense row-major tensors and the handful of kernels the model needs.
//!
//! Everything here is generic over [`Scalar`] so the same code path runs in
//! `f32` for training and `f64` for finite-difference gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{invalid, shape_err, CgtError, Result};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    fn of(v: f64) -> Self;

    fn f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); len], grad: None }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![value; len], grad: None }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value], grad: None }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::of(v)).collect())
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(shape_err!(
                "gradient length {} does not match tensor length {}",
                grad.len(),
                self.data.len()
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(shape_err!("expected a matrix, got shape {:?}", other)),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(CgtError::NonFinite(format!("{what} contains NaN or Inf")))
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.f64())).collect()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(shape_err!("matmul {:?} x {:?}", self.shape, other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }
}

/// `out += a[m,k] · b[k,n]`.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a[m,k] · b[n,k]ᵀ`.
pub(crate) fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out += a[k,m]ᵀ · b[k,n]`.
pub(crate) fn matmul_at_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Numerically stable softmax of one row, restricted to the first `active`
/// entries. Entries past `active` are set to exactly zero.
pub(crate) fn softmax_prefix<T: Scalar>(row: &[T], active: usize, out: &mut [T]) {
    let max = row[..active].iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out[..active].iter_mut().zip(&row[..active]) {
        let e = (v - max).exp();
        *o = e;
        total += e;
    }
    for o in &mut out[..active] {
        *o = *o / total;
    }
    for o in &mut out[active..] {
        *o = T::zero();
    }
}

/// Row-wise softmax of a matrix, computed with max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2()?;
    if m.data.iter().any(|v| v.is_nan()) {
        return Err(CgtError::NonFinite("softmax input contains NaN".into()));
    }
    let mut out = vec![T::zero(); r * c];
    if c > 0 {
        for i in 0..r {
            softmax_prefix(m.row(i), c, &mut out[i * c..(i + 1) * c]);
        }
    }
    Tensor::new(vec![r, c], out)
}

/// `gain ⊙ (x − mean) / sqrt(var + eps) + bias`, with the population variance.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>> {
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(shape_err!(
            "layer_norm lengths x={} gain={} bias={}",
            x.len(),
            gain.len(),
            bias.len()
        ));
    }
    if eps <= T::zero() {
        return Err(invalid!("layer_norm eps must be positive"));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let (mean, inv_std) = row_stats(x, eps);
    Ok(x
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&v, (&g, &b))| g * (v - mean) * inv_std + b)
        .collect())
}

/// Mean and `1/sqrt(var + eps)` of a row.
pub(crate) fn row_stats<T: Scalar>(x: &[T], eps: T) -> (T, T) {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn grad_must_match_shape() {
        let mut t = Tensor::<f32>::zeros(vec![2, 2]);
        assert!(t.set_grad(vec![0.0; 3]).is_err());
        t.set_grad(vec![1.0; 4]).unwrap();
        assert_eq!(t.grad().unwrap().len(), 4);
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor::<f64>::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(softmax_rows(&t).unwrap().data(), &[0.5, 0.5]);

        let t = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let s = softmax_rows(&t).unwrap();
        for (got, want) in s.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!(close(*got, want, 1e-5), "{got} vs {want}");
        }

        let t = Tensor::<f64>::from_rows(&[vec![5.0, 5.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(softmax_rows(&t).unwrap().data(), &[0.5; 4]);
    }

    #[test]
    fn softmax_rejects_nan_and_vectors() {
        let t = Tensor::<f32>::from_rows(&[vec![f32::NAN, 0.0]]).unwrap();
        assert!(softmax_rows(&t).is_err());
        let v = Tensor::<f32>::new(vec![3], vec![0.0; 3]).unwrap();
        assert!(softmax_rows(&v).is_err());
    }

    #[test]
    fn softmax_handles_large_logits() {
        let t = Tensor::<f32>::from_rows(&[vec![1000.0, 1000.0, -1000.0]]).unwrap();
        let s = softmax_rows(&t).unwrap();
        assert!(s.is_finite());
        assert!(close(s.data()[0] as f64, 0.5, 1e-6));
    }

    #[test]
    fn layer_norm_examples() {
        let out = layer_norm(&[3.0f64; 4], &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));

        let out = layer_norm(&[1.0f64, -1.0], &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert!(close(out[0], 1.0, 1e-9) && close(out[1], -1.0, 1e-9));

        let out = layer_norm(&[0.3f64, 7.0, -2.0], &[0.0; 3], &[0.5, -1.0, 2.0], 1e-5).unwrap();
        assert_eq!(out, vec![0.5, -1.0, 2.0]);

        assert!(layer_norm(&[1.0f64], &[1.0, 1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn layer_norm_standardizes() {
        let x = [0.5f64, 2.0, -3.0, 4.5, 1.0];
        let out = layer_norm(&x, &[1.0; 5], &[0.0; 5], 1e-9).unwrap();
        let mean = out.iter().sum::<f64>() / 5.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn matmul_kernels_agree() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 10.0, 11.0]);

        let bt = b.transpose().unwrap();
        let mut out = vec![0.0; 4];
        matmul_bt_acc(a.data(), bt.data(), &mut out, 2, 3, 2);
        assert_eq!(out, c.data());

        let at = a.transpose().unwrap();
        let mut out = vec![0.0; 4];
        matmul_at_acc(at.data(), b.data(), &mut out, 3, 2, 2);
        assert_eq!(out, c.data());
    }
}
