use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Vectors are `1 x n` or `n x 1`; scalars are `1 x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 2], data: Vec<f64>) -> Result<Self> {
        if shape[0] == 0 || shape[1] == 0 {
            return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
        }
        if data.len() != shape[0] * shape[1] {
            return Err(Error::shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 2], v: f64) -> Self {
        assert!(shape[0] > 0 && shape[1] > 0, "zero-sized dimension in {shape:?}");
        Self {
            shape,
            data: vec![v; shape[0] * shape[1]],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::filled([1, 1], v)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn row(values: &[f64]) -> Self {
        Self::new([1, values.len()], values.to_vec()).expect("non-empty row")
    }

    pub fn column(values: &[f64]) -> Self {
        Self::new([values.len(), 1], values.to_vec()).expect("non-empty column")
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_fan_in<R: Rng + ?Sized>(shape: [usize; 2], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-bound..=bound);
        }
        t
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Plain matrix product, no tape.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols() != other.rows() {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = Self::zeros([self.rows(), other.cols()]);
        gemm(self, false, other, false, &mut out, false);
        Ok(out)
    }
}

/// `out (+)= op(a) * op(b)`, where `op` optionally transposes.
pub(crate) fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool, out: &mut Tensor, accumulate: bool) {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
    let (kb, n) = if tb { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
    debug_assert_eq!(k, kb);
    debug_assert_eq!(out.shape, [m, n]);
    let (rsa, csa) = if ta { (1, a.cols() as isize) } else { (a.cols() as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols() as isize) } else { (b.cols() as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides and extents describe the row-major buffers exactly, and
    // `out` is a distinct allocation from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let x = Tensor::new([3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&x).unwrap(), x);
    }

    #[test]
    fn transposed_gemm() {
        let a = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = Tensor::zeros([2, 2]);
        gemm(&a, false, &a, true, &mut out, false);
        assert_eq!(out.data(), &[14.0, 32.0, 32.0, 77.0]);
        let mut out = Tensor::zeros([3, 3]);
        gemm(&a, true, &a, false, &mut out, false);
        assert_eq!(out.get(0, 0), 17.0);
        assert_eq!(out.get(2, 1), 3.0 * 2.0 + 6.0 * 5.0);
    }

    #[test]
    fn shape_errors() {
        assert!(Tensor::new([2, 2], vec![1.0]).is_err());
        assert!(Tensor::new([0, 2], vec![]).is_err());
        let a = Tensor::zeros([2, 3]);
        assert!(matches!(a.matmul(&a), Err(Error::ShapeError(_))));
    }
}
