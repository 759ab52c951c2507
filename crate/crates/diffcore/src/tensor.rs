//! Dense row-major `f64` arrays and the raw kernels the tape is built from.
//!
//! All reductions run left to right in index order. Nothing here reassociates
//! sums, so results are bit-reproducible on a given platform.

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != data.len() {
            return Err(DiffError::Layout {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty(), "tensor shape must have at least one axis");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(DiffError::Shape {
                op: "from_rows",
                lhs: vec![cols],
                rhs: vec![bad.len()],
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Number of slices along the last axis.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            self.shape[..self.shape.len() - 1].iter().product()
        } else {
            self.data.len() / c
        }
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != self.data.len() {
            return Err(DiffError::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(DiffError::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn expect_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(DiffError::Invalid {
                op,
                reason: format!("expected a 2-D array, got shape {:?}", self.shape),
            }),
        }
    }

    /// Standard matrix product `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.expect_2d("matmul")?;
        let (k2, n) = other.expect_2d("matmul")?;
        if k != k2 {
            return Err(DiffError::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(&self.data, &other.data, &mut out, m, k, n);
        Self::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.expect_2d("transpose")?;
        Ok(Self {
            shape: vec![n, m],
            data: transpose_raw(&self.data, m, n),
        })
    }

    /// Softmax over the last axis.
    ///
    /// `mask` is additive (0 or `-inf`) and is broadcast over leading axes: its
    /// length must be a multiple of the slice length and divide the array
    /// length. Masked entries come out as exactly zero.
    pub fn softmax_lastdim(&self, mask: Option<&Tensor>) -> Result<Self> {
        let n = self.cols();
        if n == 0 {
            return Err(DiffError::Invalid {
                op: "softmax_lastdim",
                reason: "last dimension must be at least 1".into(),
            });
        }
        if let Some(m) = mask {
            if m.cols() != n || m.is_empty() || self.len() % m.len() != 0 {
                return Err(DiffError::Shape {
                    op: "softmax_lastdim",
                    lhs: self.shape.clone(),
                    rhs: m.shape.clone(),
                });
            }
        }
        let mut out = vec![0.0; self.len()];
        for (slice, (src, dst)) in self
            .data
            .chunks(n)
            .zip(out.chunks_mut(n))
            .enumerate()
        {
            let mrow = mask.map(|m| {
                let start = (slice * n) % m.len();
                &m.data[start..start + n]
            });
            softmax_row(src, mrow, dst).map_err(|_| DiffError::AllMasked { slice })?;
        }
        Self::new(self.shape.clone(), out)
    }

    /// Normalises each last-axis slice to zero mean and unit (population)
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Self> {
        let n = self.cols();
        if gain.len() != n || bias.len() != n {
            return Err(DiffError::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        let mut out = vec![0.0; self.len()];
        let mut xhat = vec![0.0; n];
        for (src, dst) in self.data.chunks(n).zip(out.chunks_mut(n)) {
            normalize_row(src, eps, &mut xhat);
            for j in 0..n {
                dst[j] = xhat[j] * gain.data[j] + bias.data[j];
            }
        }
        Self::new(self.shape.clone(), out)
    }
}

/// `c += a·b` for row-major `a: [m×k]`, `b: [k×n]`, `c: [m×n]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c += aᵀ·b` for `a: [k×m]`, `b: [k×n]`, `c: [m×n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += api * bj;
            }
        }
    }
}

/// `c += a·bᵀ` for `a: [m×k]`, `b: [n×k]`, `c: [m×n]`.
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let bt = transpose_raw(b, n, k);
    gemm_acc(a, &bt, c, m, k, n);
}

pub(crate) fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn softmax_row(src: &[f64], mask: Option<&[f64]>, dst: &mut [f64]) -> std::result::Result<(), ()> {
    let logit = |j: usize| src[j] + mask.map_or(0.0, |m| m[j]);
    let mut max = f64::NEG_INFINITY;
    for j in 0..src.len() {
        max = max.max(logit(j));
    }
    if max == f64::NEG_INFINITY {
        return Err(());
    }
    let mut total = 0.0;
    for (j, d) in dst.iter_mut().enumerate() {
        let l = logit(j);
        *d = if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() };
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
    Ok(())
}

/// Writes the standardised row into `xhat` and returns `1/sqrt(var + eps)`.
pub(crate) fn normalize_row(src: &[f64], eps: f64, xhat: &mut [f64]) -> f64 {
    let n = src.len() as f64;
    let mean = src.iter().fold(0.0, |a, v| a + v) / n;
    let var = src.iter().fold(0.0, |a, v| a + (v - mean) * (v - mean)) / n;
    let inv = 1.0 / (var + eps).sqrt();
    for (x, &v) in xhat.iter_mut().zip(src) {
        *x = (v - mean) * inv;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_projector() {
        let b = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&b).unwrap(), b);
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let b2 = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let want = Tensor::from_rows(&[vec![5.0, 6.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(p.matmul(&b2).unwrap(), want);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, DiffError::Shape { .. }));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let x = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        let s = x.softmax_lastdim(None).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let s = x.softmax_lastdim(None).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_mask_zeroes_and_all_masked_errors() {
        let x = Tensor::new(vec![2, 2], vec![0.3, 0.7, 0.1, 0.2]).unwrap();
        let mask = Tensor::new(vec![2, 2], vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        let err = x.softmax_lastdim(Some(&mask)).unwrap_err();
        assert_eq!(err, DiffError::AllMasked { slice: 1 });
        let mask = Tensor::new(vec![1, 2], vec![0.0, f64::NEG_INFINITY]).unwrap();
        let s = x.softmax_lastdim(Some(&mask)).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn layer_norm_edge_cases() {
        let one = Tensor::full(&[2], 1.0);
        let zero = Tensor::zeros(&[2]);
        let c = Tensor::full(&[1, 2], 3.5);
        assert_eq!(c.layer_norm(&one, &zero, 1e-5).unwrap().data(), &[0.0, 0.0]);
        let x = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let eps = 1e-12;
        let y = x.layer_norm(&one, &zero, eps).unwrap();
        let scale = 1.0 / (1.0 + eps).sqrt();
        assert_eq!(y.data(), &[scale, -scale]);
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let a = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 4], (0..12).map(f64::from).collect()).unwrap();
        let mut c = vec![0.0; 8];
        gemm_tn_acc(a.data(), b.data(), &mut c, 3, 2, 4);
        assert_eq!(c, a.transpose().unwrap().matmul(&b).unwrap().into_data());
        let d = Tensor::new(vec![4, 2], (0..8).map(f64::from).collect()).unwrap();
        let mut e = vec![0.0; 12];
        gemm_nt_acc(a.data(), d.data(), &mut e, 3, 2, 4);
        assert_eq!(e, a.matmul(&d.transpose().unwrap()).unwrap().into_data());
    }
}
