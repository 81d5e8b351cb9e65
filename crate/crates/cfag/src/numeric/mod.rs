//! Dense numeric primitives: row-major matrices, matmul kernels, the Adam
//! optimizer, a seeded random source and a finite-difference gradient oracle.

mod adam;
mod fdiff;
mod rng;

pub use adam::{adam_step, AdamState};
pub use fdiff::finite_difference_gradient;
pub use rng::SeededRng;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix. Each row usually holds one node's embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Below this many output elements the parallel kernels run serially.
const PAR_THRESHOLD: usize = 16 * 1024;

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Build from a row-major value vector. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer length mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * *b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn transposed(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Error out if any entry is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// `self @ other`: (m,k) x (k,n) -> (m,n).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        let run_row = |i: usize, out_row: &mut [T]| {
            let a_row = self.row(i);
            for (p, &a) in a_row.iter().enumerate().take(k) {
                if a == T::zero() {
                    continue;
                }
                let b_row = other.row(p);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        };
        if m * n >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| run_row(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                run_row(i, row);
            }
        }
        out
    }

    /// `self @ other^T`: (m,k) x (n,k) -> (m,n). Both operands are read
    /// row-wise, so this is the cache-friendly product of two row-major
    /// embedding tables.
    pub fn matmul_nt(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension mismatch");
        let (m, n) = (self.rows, other.rows);
        let mut out = Self::zeros(m, n);
        let run_row = |i: usize, out_row: &mut [T]| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, other.row(j));
            }
        };
        if m * n >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| run_row(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                run_row(i, row);
            }
        }
        out
    }

    /// `self^T @ other`: (k,m) x (k,n) -> (m,n).
    pub fn matmul_tn(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension mismatch");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        let run_row = |i: usize, out_row: &mut [T]| {
            for p in 0..k {
                let a = self.data[p * m + i];
                if a == T::zero() {
                    continue;
                }
                let b_row = other.row(p);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        };
        if m * n >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| run_row(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                run_row(i, row);
            }
        }
        out
    }

    /// Gram matrix `self @ self^T`, filling both triangles from one
    /// dot-product per unordered row pair.
    pub fn gram(&self) -> Self {
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        let pairs: Vec<(usize, usize, T)> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let row_i = self.row(i);
                (i..n).map(move |j| (i, j, dot(row_i, self.row(j))))
            })
            .collect();
        for (i, j, v) in pairs {
            out.data[i * n + j] = v;
            out.data[j * n + i] = v;
        }
        out
    }
}

/// Dot product with four-way accumulator unrolling.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `out += alpha * src`, over slices.
#[inline]
pub fn axpy<T: Scalar>(out: &mut [T], src: &[T], alpha: T) {
    debug_assert_eq!(out.len(), src.len());
    for (o, &s) in out.iter_mut().zip(src.iter()) {
        *o += alpha * s;
    }
}

/// Numerically-stable softmax over a slice, in place: subtracts the max
/// before exponentiating. An all-equal slice becomes uniform.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().cloned().fold(xs[0], T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Backward pass of a softmax slice: given `y = softmax(x)` and `dL/dy`,
/// returns `dL/dx` into `grad_x`.
pub fn softmax_backward<T: Scalar>(y: &[T], grad_y: &[T], grad_x: &mut [T]) {
    let inner = dot(y, grad_y);
    for ((gx, &yi), &gyi) in grad_x.iter_mut().zip(y.iter()).zip(grad_y.iter()) {
        *gx = yi * (gyi - inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn naive_matmul(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = SeededRng::new(seed);
        DenseMatrix::from_vec(rows, cols, rng.uniform_vec(rows * cols, -1.0, 1.0))
    }

    #[test]
    fn matmul_matches_naive() {
        let a = random_matrix(7, 5, 1);
        let b = random_matrix(5, 9, 2);
        let expect = naive_matmul(&a, &b);
        let got = a.matmul(&b);
        for (x, y) in got.as_slice().iter().zip(expect.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn matmul_nt_and_tn_match_naive() {
        let a = random_matrix(6, 4, 3);
        let b = random_matrix(8, 4, 4);
        let expect = naive_matmul(&a, &b.transposed());
        let got = a.matmul_nt(&b);
        for (x, y) in got.as_slice().iter().zip(expect.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }

        let c = random_matrix(5, 6, 5);
        let d = random_matrix(5, 3, 6);
        let expect = naive_matmul(&c.transposed(), &d);
        let got = c.matmul_tn(&d);
        for (x, y) in got.as_slice().iter().zip(expect.as_slice()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn gram_is_symmetric_and_correct() {
        let a = random_matrix(10, 6, 7);
        let g = a.gram();
        let expect = naive_matmul(&a, &a.transposed());
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(g.get(i, j), g.get(j, i));
                assert_relative_eq!(g.get(i, j), expect.get(i, j), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let mut xs = vec![3.0_f64; 5];
        softmax_in_place(&mut xs);
        for x in &xs {
            assert_relative_eq!(*x, 0.2, max_relative = 1e-14);
        }
        let sum: f64 = xs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-13);
    }

    #[test]
    fn softmax_handles_large_magnitudes() {
        let mut xs = vec![1000.0_f64, 1001.0, 999.0];
        softmax_in_place(&mut xs);
        assert!(xs.iter().all(|x| x.is_finite()));
        let sum: f64 = xs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-13);
    }

    #[test]
    fn check_finite_rejects_nan() {
        let mut m = DenseMatrix::<f64>::zeros(2, 2);
        assert!(m.check_finite("test").is_ok());
        m.set(0, 1, f64::NAN);
        assert!(m.check_finite("test").is_err());
    }

    #[test]
    fn generic_kernels_run_in_f32() {
        let a = DenseMatrix::<f32>::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = a.matmul(&a);
        assert_eq!(b.get(0, 0), 7.0);
        assert_eq!(b.get(1, 1), 22.0);
    }
}
