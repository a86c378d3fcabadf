//! Dense row-major tensors.
//!
//! Only the handful of operations the engine needs are provided. There is
//! no broadcasting beyond tensor-scalar operations. Every reduction sums
//! sequentially in index order, so results are bit-reproducible for a given
//! scalar type.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape("tensor", &[], shape));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    /// Tensor of the given shape with every element equal to `value`.
    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; len] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape("tensor data length", &[len], &[data.len()]));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Identity matrix of order `n`.
    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Same buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape("rank-2 tensor", &[0, 0], &self.shape)),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    fn zip(&self, other: &Self, context: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(context, &self.shape, &other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// In place: `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("axpy", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        transpose_into(&self.data, r, c, &mut out);
        Ok(Tensor { shape: alloc::vec![c, r], data: out })
    }

    /// Matrix product `self (m x k) * rhs (k x n)`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul inner extent", &[k], &[k2]));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, &rhs.data, &mut out);
        Ok(Tensor { shape: alloc::vec![m, n], data: out })
    }

    /// Euclidean norm of every row of a rank-2 tensor.
    pub fn row_l2_norms(&self) -> Result<Self> {
        let (n, p) = self.dims2()?;
        let norms = (0..n).map(|r| l2_norm(&self.data[r * p..(r + 1) * p])).collect();
        Tensor::from_vec(&[n], norms)
    }
}

/// Accumulating matrix product on raw row-major buffers: `c += a * b`.
///
/// Loop order is `i, l, j`; every output element is accumulated
/// sequentially over the contraction index `l = 0..k`.
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == T::zero() {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (c_ij, &b_lj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_il * b_lj;
            }
        }
    }
}

/// Writes the transpose of the `rows x cols` buffer `src` into `dst`.
pub fn transpose_into<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn sum_sq<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

pub fn l2_norm<T: Scalar>(a: &[T]) -> T {
    sum_sq(a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn full_fills_every_element() {
        let z = Tensor::<f64>::full(&[2, 2], 0.0).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        assert_eq!(Tensor::<f64>::full(&[1], 1.0).unwrap().data(), &[1.0]);
        let h = Tensor::<f64>::full(&[3, 1, 2], 0.5).unwrap();
        assert_eq!(h.len(), 6);
        assert!(h.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn full_rejects_zero_extent() {
        assert!(matches!(Tensor::<f64>::full(&[2, 0], 1.0), Err(Error::InvalidShape { .. })));
        assert!(Tensor::<f64>::full(&[], 1.0).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Tensor::eye(2).unwrap().matmul(&a).unwrap(), a);
        let ones = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(a.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[4, 2]).unwrap();
        assert!(matches!(a.matmul(&b), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn row_norms() {
        assert_eq!(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).row_l2_norms().unwrap().data(), &[1.0, 1.0]);
        assert_eq!(t(&[1, 2], &[3.0, 4.0]).row_l2_norms().unwrap().data(), &[5.0]);
        assert_eq!(t(&[1, 2], &[0.0, 0.0]).row_l2_norms().unwrap().data(), &[0.0]);
        assert!(t(&[4], &[1.0; 4]).row_l2_norms().is_err());
    }

    #[test]
    fn transpose_round_trip() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let at = a.transpose().unwrap();
        assert_eq!(at.shape(), &[3, 2]);
        assert_eq!(at.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(at.transpose().unwrap(), a);
    }

    #[test]
    fn operations_leave_inputs_untouched() {
        let a = t(&[2, 2], &[1.0, -2.0, 3.0, 4.0]);
        let before = a.clone();
        let _ = a.matmul(&a).unwrap();
        let _ = a.row_l2_norms().unwrap();
        let _ = a.scale(3.0);
        let _ = a.add(&a).unwrap();
        assert_eq!(a, before);
    }
}
