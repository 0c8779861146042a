//! Dense row-major matrix of 64-bit reals.
//!
//! All reductions accumulate left to right in index order so that results are
//! bit-reproducible across runs and platforms. Every public operation either
//! returns a matrix whose entries are all finite or reports an error.

use crate::error::{CoclrError, Result};

/// Dense row-major 2-D array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zeros matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major buffer. Fails on length mismatch or non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoclrError::DimMismatch(format!(
                "buffer of length {} cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        let m = Self { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    /// Build from nested rows. Intended for literals in tests and small fixtures.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(CoclrError::DimMismatch("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn check_finite(&self, op: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoclrError::NonFinite(format!(
                    "{op}: entry ({}, {}) is {v}",
                    i / self.cols.max(1),
                    i % self.cols.max(1)
                )));
            }
        }
        Ok(())
    }

    /// Matrix product. Accumulation over the inner dimension runs in
    /// increasing index order for every output element.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(CoclrError::DimMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        out.check_finite("matmul")?;
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(CoclrError::DimMismatch(format!(
                "matmul_transposed: {}x{} times ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        out.check_finite("matmul_transposed")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CoclrError::DimMismatch(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite(op)?;
        Ok(out)
    }

    /// Apply `f` to every entry. The caller is responsible for keeping the
    /// result finite; downstream consumers re-validate.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Scalar multiple.
    pub fn scale(&self, s: f64) -> Result<Matrix> {
        let out = Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        };
        out.check_finite("scale")?;
        Ok(out)
    }

    /// Rowwise dot products of two equal-shape matrices.
    pub fn row_dots(&self, other: &Matrix) -> Result<Vec<f64>> {
        if self.shape() != other.shape() {
            return Err(CoclrError::DimMismatch(format!(
                "row_dots: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), other.row(i))).collect())
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| dot(self.row(i), self.row(i)).sqrt())
            .collect()
    }

    /// Sum over rows, yielding one value per column.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }

    /// Sum of all entries in index order.
    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> Option<f64> {
        if self.shape() != other.shape() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Each row divided by `max(row_norm, eps)`. Rows with norm below `eps`
    /// keep their direction but are scaled by `1/eps`, so a zero row stays zero.
    pub fn l2_normalize_rows(&self, eps: f64) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let norm = dot(self.row(r), self.row(r)).sqrt().max(eps);
            for v in out.row_mut(r) {
                *v /= norm;
            }
        }
        out
    }

    /// Rowwise softmax with max subtraction. Fails on non-finite input.
    pub fn softmax_rows(&self) -> Result<Matrix> {
        self.check_finite("softmax_rows input")?;
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(out)
    }
}

/// Dot product with left-to-right accumulation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Default guard for row normalization.
pub const NORM_EPS: f64 = 1e-12;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_is_exact() {
        let a = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 7.0]]).unwrap();
        let i = Matrix::identity(2);
        assert_eq!(i.matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&i).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap());
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = crate::numerics::Rng::new(11);
        let mut a = Matrix::zeros(7, 5);
        let mut b = Matrix::zeros(5, 3);
        rng.fill_uniform_in(&mut a, -1.0, 1.0);
        rng.fill_uniform_in(&mut b, -1.0, 1.0);
        let c = a.matmul(&b).unwrap();

        // Independent i-j-k oracle.
        let mut oracle = Matrix::zeros(7, 3);
        for i in 0..7 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                oracle.set(i, j, acc);
            }
        }
        assert!(c.max_abs_diff(&oracle).unwrap() <= 1e-12);
    }

    #[test]
    fn matmul_dim_mismatch_is_reported() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(CoclrError::DimMismatch(_))));
    }

    #[test]
    fn matmul_transposed_matches_explicit_transpose() {
        let mut rng = crate::numerics::Rng::new(3);
        let mut a = Matrix::zeros(4, 6);
        let mut b = Matrix::zeros(5, 6);
        rng.fill_uniform_in(&mut a, -2.0, 2.0);
        rng.fill_uniform_in(&mut b, -2.0, 2.0);
        let fast = a.matmul_transposed(&b).unwrap();
        let slow = a.matmul(&b.transpose()).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12);
    }

    #[test]
    fn normalize_345_row() {
        let m = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = m.l2_normalize_rows(NORM_EPS);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_preserves_zero_row() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let n = m.l2_normalize_rows(1e-12);
        assert_eq!(n.data(), &[0.0, 0.0]);
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let mut rng = crate::numerics::Rng::new(5);
        let mut m = Matrix::zeros(4, 6);
        rng.fill_uniform_in(&mut m, -3.0, 3.0);
        let n = m.l2_normalize_rows(NORM_EPS);
        for norm in n.row_norms() {
            assert!((norm - 1.0).abs() <= 1e-12, "row norm {norm}");
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = crate::numerics::Rng::new(17);
        let mut m = Matrix::zeros(5, 4);
        rng.fill_uniform_in(&mut m, -3.0, 3.0);
        let once = m.l2_normalize_rows(NORM_EPS);
        let twice = once.l2_normalize_rows(NORM_EPS);
        assert!(once.max_abs_diff(&twice).unwrap() <= 1e-12);
    }

    #[test]
    fn softmax_symmetry() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = m.softmax_rows().unwrap();
        assert!((s.get(0, 0) - 0.5).abs() <= 1e-15);
        assert!((s.get(0, 1) - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn softmax_stable_under_large_equal_logits() {
        let m = Matrix::from_rows(&[vec![1000.0, 1000.0, 1000.0]]).unwrap();
        let s = m.softmax_rows().unwrap();
        for c in 0..3 {
            assert!((s.get(0, c) - 1.0 / 3.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = crate::numerics::Rng::new(23);
        let mut m = Matrix::zeros(3, 5);
        rng.fill_uniform_in(&mut m, -4.0, 4.0);
        let s = m.softmax_rows().unwrap();
        for r in 0..3 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
        let shifted = m.map(|v| v + 7.25);
        let s2 = shifted.softmax_rows().unwrap();
        assert!(s.max_abs_diff(&s2).unwrap() <= 1e-12);
    }

    #[test]
    fn softmax_matches_compensated_oracle() {
        // Oracle: no max subtraction, Neumaier-compensated sums.
        fn oracle_row(row: &[f64]) -> Vec<f64> {
            let exps: Vec<f64> = row.iter().map(|&v| v.exp()).collect();
            let mut sum = 0.0;
            let mut comp = 0.0;
            for &e in &exps {
                let t = sum + e;
                comp += if sum.abs() >= e.abs() {
                    (sum - t) + e
                } else {
                    (e - t) + sum
                };
                sum = t;
            }
            let total = sum + comp;
            exps.iter().map(|&e| e / total).collect()
        }
        let mut rng = crate::numerics::Rng::new(41);
        let mut m = Matrix::zeros(3, 5);
        rng.fill_uniform_in(&mut m, -5.0, 5.0);
        let s = m.softmax_rows().unwrap();
        for r in 0..3 {
            let want = oracle_row(m.row(r));
            for (c, w) in want.iter().enumerate() {
                assert!((s.get(r, c) - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut m = Matrix::zeros(1, 2);
        m.data_mut()[0] = f64::NAN;
        assert!(matches!(
            m.softmax_rows(),
            Err(CoclrError::NonFinite(_))
        ));
    }

    #[test]
    fn from_vec_rejects_bad_length_and_nan() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }
}
