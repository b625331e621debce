//! Dense row-major `f64` matrices and a reverse-mode tape over them.

pub mod alloc;
mod check;
mod tape;

pub use check::finite_diff_check;
pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::softmax_rows;

use crate::error::{Error, Result};
use std::fmt;

/// Negative entries down to `-EPS_CLAMP` are rounding noise and clamp to zero
/// before a square root; anything lower is a domain error.
pub const EPS_CLAMP: f64 = 1e-12;

/// Dense row-major matrix of 64-bit floats.
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        alloc::track(data.len());
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_parts(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(1, 1, vec![value])
    }

    /// Builds a matrix from row-major data, checking the length.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self::from_parts(rows, cols, data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Input("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self::from_parts(values.len(), 1, values.to_vec())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_parts(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        alloc::release(self.data.len());
        std::mem::take(&mut self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Self::from_parts(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        if m == 0 || n == 0 || k == 0 {
            return Ok(out);
        }
        // SAFETY: the pointers cover m*k, k*n and m*n elements with the
        // row-major strides passed alongside them.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(out)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "subtract", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    /// Column vector of row sums (right-multiplication by the ones vector).
    pub fn row_sum(&self) -> Matrix {
        let data = (0..self.rows).map(|i| self.row(i).iter().sum()).collect();
        Self::from_parts(self.rows, 1, data)
    }

    /// Row vector of column sums.
    pub fn col_sum(&self) -> Matrix {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in out.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        Self::from_parts(1, self.cols, out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Entrywise square root; entries in `[-EPS_CLAMP, 0)` clamp to zero.
    pub fn sqrt(&self) -> Result<Matrix> {
        if let Some(&bad) = self.data.iter().find(|&&v| v < -EPS_CLAMP || v.is_nan()) {
            return Err(Error::NumericDomain(format!("sqrt of {bad}")));
        }
        Ok(self.map(|v| v.max(0.0).sqrt()))
    }

    /// Entrywise quotient with the convention that a zero denominator yields zero.
    pub fn divide_safe(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "divide_safe", safe_div)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_parts(idx.len(), self.cols, data)
    }

    /// Columns stacked side by side.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::Input("hstack of matrices with different row counts".into()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Self::from_parts(rows, cols, data))
    }
}

#[inline]
pub(crate) fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

impl Clone for Matrix {
    fn clone(&self) -> Self {
        Self::from_parts(self.rows, self.cols, self.data.clone())
    }
}

impl Drop for Matrix {
    fn drop(&mut self) {
        alloc::release(self.data.len());
    }
}

impl PartialEq for Matrix {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data == other.data
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(6) {
            write!(f, "{:?}", &self.row(i)[..self.cols.min(6)])?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_cases() {
        let m = random(3, 3, 1);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.matmul(&Matrix::identity(2)).unwrap(), a);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(8, 8, 2);
        let b = random(8, 8, 3);
        let diff = a.matmul(&b).unwrap().max_abs_diff(&triple_loop(&a, &b)).unwrap();
        assert!(diff < 1e-12, "{diff}");
        let c = random(5, 7, 4);
        let d = random(7, 3, 5);
        assert!(c.matmul(&d).unwrap().max_abs_diff(&triple_loop(&c, &d)).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let err = random(2, 3, 1).matmul(&random(2, 3, 1)).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "matmul", .. }));
    }

    #[test]
    fn hadamard_cases() {
        let m = random(4, 5, 6);
        assert_eq!(m.hadamard(&Matrix::ones(4, 5)).unwrap(), m);
        assert_eq!(m.hadamard(&Matrix::zeros(4, 5)).unwrap(), Matrix::zeros(4, 5));
        let n = random(4, 5, 7);
        let h = m.hadamard(&n).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                assert!((h.get(i, j) - m.get(i, j) * n.get(i, j)).abs() < 1e-15);
            }
        }
        assert!(m.hadamard(&random(5, 4, 1)).is_err());
    }

    #[test]
    fn row_sum_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.row_sum().as_slice(), &[3.0, 7.0]);
        assert_eq!(Matrix::zeros(3, 3).row_sum(), Matrix::zeros(3, 1));
        let r = random(16, 16, 8);
        let s = r.row_sum();
        for i in 0..16 {
            let mut acc = 0.0;
            for j in 0..16 {
                acc += r.get(i, j);
            }
            assert!((s.get(i, 0) - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_cases() {
        assert_eq!(Matrix::scalar(0.0).divide_safe(&Matrix::scalar(0.0)).unwrap().get(0, 0), 0.0);
        let s = Matrix::from_rows(&[vec![4.0, 9.0]]).unwrap().sqrt().unwrap();
        assert_eq!(s.as_slice(), &[2.0, 3.0]);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.mean(), 2.5);
        assert_eq!(Matrix::scalar(-5e-13).sqrt().unwrap().get(0, 0), 0.0);
        assert!(matches!(Matrix::scalar(-1e-6).sqrt(), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn alloc_accounting_tracks_live_buffers() {
        let (_, stats) = alloc::measure(|| {
            let a = Matrix::zeros(10, 10);
            let b = a.clone();
            drop(a);
            drop(b);
            let _c = Matrix::zeros(5, 5);
        });
        assert_eq!(stats.peak_floats, 200);
        assert_eq!(stats.total_floats, 225);
    }

    #[test]
    fn into_vec_releases_accounting() {
        let before = alloc::live_floats();
        let v = Matrix::zeros(4, 4).into_vec();
        assert_eq!(v.len(), 16);
        assert_eq!(alloc::live_floats(), before);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matmul_is_associative(n in 1usize..7, k in 1usize..7, m in 1usize..7, p in 1usize..7, seed in 0u64..1000) {
                let a = random(n, k, seed);
                let b = random(k, m, seed + 1);
                let c = random(m, p, seed + 2);
                let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
                let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
                let scale = left.as_slice().iter().fold(1.0f64, |s, v| s.max(v.abs()));
                prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-9 * scale);
            }

            #[test]
            fn hadamard_commutes_and_distributes(r in 1usize..8, c in 1usize..8, seed in 0u64..1000) {
                let a = random(r, c, seed);
                let b = random(r, c, seed + 1);
                let d = random(r, c, seed + 2);
                prop_assert!(a.hadamard(&b).unwrap().max_abs_diff(&b.hadamard(&a).unwrap()).unwrap() <= 1e-12);
                let lhs = a.hadamard(&b.add(&d).unwrap()).unwrap();
                let rhs = a.hadamard(&b).unwrap().add(&a.hadamard(&d).unwrap()).unwrap();
                prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
            }
        }
    }
}
