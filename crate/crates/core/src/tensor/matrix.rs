use rayon::prelude::*;

use super::counter::{record_adds, record_macs};
use super::real::Real;
use crate::error::{Error, Result};

/// Dense row-major matrix with at least one row and one column.
///
/// Values are immutable once built; every operation returns a new matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T: Real = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(
                "Matrix::from_vec",
                "rows >= 1 and cols >= 1",
                format!("{rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} elements for {rows}x{cols}", rows * cols),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(
                "Matrix::from_rows",
                format!("every row of length {cols}"),
                format!("a row of length {}", bad.len()),
            ));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols)
    }

    /// Copy with one entry replaced. Used by finite-difference oracles.
    pub fn with_entry(&self, i: usize, j: usize, value: T) -> Self {
        let mut out = self.clone();
        out.data[i * self.cols + j] = value;
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| if x.abs() > acc { x.abs() } else { acc })
    }

    /// Largest absolute entry-wise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape() != other.shape() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())),
        )
    }

    /// `‖self − reference‖∞ / ‖reference‖∞`, or the absolute difference when
    /// the reference is identically zero.
    pub fn rel_diff(&self, reference: &Self) -> Option<T> {
        let diff = self.max_abs_diff(reference)?;
        let scale = reference.max_abs();
        Some(if scale > T::zero() { diff / scale } else { diff })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64_lossy(x.as_f64()))
                .collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn relu(&self) -> Self {
        self.map(|x| x.max(T::zero()))
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    /// In-place element-wise sum; recorded as `rows·cols` additions.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        record_adds(self.data.len() as u64);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "sub",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        })
    }

    fn check_matmul(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.cols != other.rows {
            return Err(Error::shape(
                op,
                format!("left cols == right rows ({}x{} · {}x?)", self.rows, self.cols, self.cols),
                format!("{}x{} · {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        Ok(())
    }

    /// Matrix product with a fixed accumulation order.
    ///
    /// Each output entry is accumulated sequentially over the inner
    /// dimension starting from zero, so results are bit-reproducible and
    /// identical to a naive triple loop. Records `m·k·n` MACs.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_matmul(other, "matmul")?;
        let (m, k, n) = (self.rows, self.cols, other.cols);
        record_macs((m * k * n) as u64);
        let mut out = vec![T::zero(); m * n];
        for (a_row, out_row) in self.data.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
            gemv_row(a_row, &other.data, n, out_row);
        }
        Ok(Self {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// Row-parallel product for benchmark mode. Rows are independent, so the
    /// result is bit-identical to [`Matrix::matmul`].
    pub fn par_matmul(&self, other: &Self) -> Result<Self> {
        self.check_matmul(other, "par_matmul")?;
        let (m, k, n) = (self.rows, self.cols, other.cols);
        record_macs((m * k * n) as u64);
        let mut out = vec![T::zero(); m * n];
        out.par_chunks_exact_mut(n)
            .zip(self.data.par_chunks_exact(k))
            .for_each(|(out_row, a_row)| gemv_row(a_row, &other.data, n, out_row));
        Ok(Self {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// Divides each row by `max(‖row‖₂, eps)`. Rows with norm below `eps`
    /// shrink toward zero instead of producing NaN; an all-zero row stays zero.
    pub fn l2_normalize_rows(&self, eps: T) -> Self {
        assert!(eps > T::zero(), "eps must be positive");
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            let denom = row_norm(row).max(eps);
            for x in row.iter_mut() {
                *x /= denom;
            }
        }
        out
    }

    pub fn row_norms(&self) -> Vec<T> {
        self.iter_rows().map(row_norm).collect()
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        out
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Multiplies row `i` by `factors[i]`.
    pub fn scale_rows(&self, factors: &[T]) -> Self {
        assert_eq!(factors.len(), self.rows);
        let mut out = self.clone();
        for (row, &f) in out.data.chunks_exact_mut(self.cols).zip(factors) {
            for x in row.iter_mut() {
                *x *= f;
            }
        }
        out
    }
}

#[inline]
fn row_norm<T: Real>(row: &[T]) -> T {
    row.iter().map(|&x| x * x).sum::<T>().sqrt()
}

#[inline]
fn gemv_row<T: Real>(a_row: &[T], b: &[T], n: usize, out_row: &mut [T]) {
    for (&a, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += a * bv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{measure, random_matrix, Distribution};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut sum = 0.0;
            for k in 0..a.cols() {
                sum += a.get(i, k) * b.get(k, j);
            }
            sum
        })
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(Matrix::<f64>::from_vec(0, 3, vec![]).is_err());
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0]]).is_err());
    }

    #[test]
    fn identity_product() {
        let a = random_matrix::<f64>(3, 3, 5, Distribution::Uniform { low: -1.0, high: 1.0 });
        assert_eq!(Matrix::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(a.matmul(&b).unwrap(), m(&[&[19.0, 22.0], &[43.0, 50.0]]));
    }

    #[test]
    fn matches_triple_loop_exactly() {
        let a = random_matrix::<f64>(7, 5, 11, Distribution::standard_normal());
        let b = random_matrix::<f64>(5, 3, 12, Distribution::standard_normal());
        let c = a.matmul(&b).unwrap();
        let oracle = triple_loop(&a, &b);
        assert_eq!(c.data(), oracle.data());
        assert_eq!(a.par_matmul(&b).unwrap().data(), oracle.data());
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::<f64>::zeros(2, 3);
        let err = a.matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }));
    }

    #[test]
    fn matmul_counts_macs() {
        let a = Matrix::<f64>::zeros(4, 6);
        let b = Matrix::<f64>::zeros(6, 5);
        let (_, counts) = measure(|| a.matmul(&b).unwrap());
        assert_eq!(counts.macs, 120);
    }

    #[test]
    fn normalize_pythagorean_row() {
        let out = m(&[&[3.0, 4.0]]).l2_normalize_rows(1e-12);
        assert!((out.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((out.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_zero_row_stays_zero() {
        let out = m(&[&[0.0, 0.0], &[1.0, 0.0]]).l2_normalize_rows(1e-12);
        assert_eq!(out.row(0), &[0.0, 0.0]);
        assert_eq!(out.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let a = random_matrix::<f64>(6, 4, 3, Distribution::standard_normal());
        for norm in a.l2_normalize_rows(1e-12).row_norms() {
            assert!((norm - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(m(&[&[123.4]]).softmax_rows().get(0, 0), 1.0);
        let eq = m(&[&[2.5; 4]]).softmax_rows();
        assert!(eq.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let s = m(&[&[0.0, 3f64.ln()]]).softmax_rows();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let s = m(&[&[1e308, -1e308, 1e308]]).softmax_rows();
        assert!(s.is_finite());
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = random_matrix::<f64>(3, 7, 1, Distribution::standard_normal());
        assert_eq!(a.transpose().shape(), (7, 3));
        assert_eq!(a.transpose().transpose(), a);
    }
}
