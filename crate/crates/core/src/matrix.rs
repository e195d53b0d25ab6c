//! Dense row-major matrices of 64-bit reals.
//!
//! This is the sole numeric container of the crate: weights, activations,
//! logit batches and prediction tensors are all `Matrix` values. Two
//! contracts hold everywhere:
//!
//! * every entry of every matrix returned from a public operation is finite
//!   (no NaN/Inf); a violation is reported as [`MatrixError::NonFinite`];
//! * accumulations use a fixed loop order, so results are identical from
//!   run to run on the same platform.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("{op}: dimension mismatch ({lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols})")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("{op}: data length {len} does not match {rows}x{cols}")]
    BadLength {
        op: &'static str,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("{op}: produced a non-finite entry")]
    NonFinite { op: &'static str },
}

/// Dense rows x cols matrix, row-major `f64` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self, MatrixError> {
        Self::from_vec(rows, cols, vec![value; rows * cols])
    }

    /// Builds a matrix from row-major data, checking length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::BadLength {
                op: "from_vec",
                rows,
                cols,
                len: data.len(),
            });
        }
        let m = Matrix { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MatrixError::BadLength {
                    op: "from_rows",
                    rows: rows.len(),
                    cols,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Identity matrix of the given order.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    // Constructor for operations that provably preserve finiteness.
    fn new_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    fn checked(self, op: &'static str) -> Result<Self, MatrixError> {
        self.check_finite(op)?;
        Ok(self)
    }

    fn check_finite(&self, op: &'static str) -> Result<(), MatrixError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(MatrixError::NonFinite { op })
        }
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

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<(), MatrixError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(MatrixError::ShapeMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        Ok(())
    }

    /// Matrix product `self * rhs`.
    ///
    /// The accumulation over the inner dimension runs in ascending index
    /// order for every output entry; there is no reduction reordering.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, MatrixError> {
        if self.cols != rhs.rows {
            return Err(MatrixError::ShapeMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = vec![0.0; self.rows * rhs.cols];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = rhs.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Matrix::new_unchecked(self.rows, rhs.cols, out).checked("matmul")
    }

    /// `transpose(self) * rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self, MatrixError> {
        if self.rows != rhs.rows {
            return Err(MatrixError::ShapeMismatch {
                op: "matmul_tn",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = vec![0.0; self.cols * rhs.cols];
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                let out_row = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ki * b_kj;
                }
            }
        }
        Matrix::new_unchecked(self.cols, rhs.cols, out).checked("matmul_tn")
    }

    /// `self * transpose(rhs)` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self, MatrixError> {
        if self.cols != rhs.cols {
            return Err(MatrixError::ShapeMismatch {
                op: "matmul_nt",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let mut out = vec![0.0; self.rows * rhs.rows];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out[i * rhs.rows..(i + 1) * rhs.rows];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Matrix::new_unchecked(self.rows, rhs.rows, out).checked("matmul_nt")
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix::new_unchecked(self.cols, self.rows, out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, MatrixError> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, MatrixError> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Result<Self, MatrixError> {
        self.map("scale", |v| v * factor)
    }

    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Self, MatrixError> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Matrix::new_unchecked(self.rows, self.cols, data).checked(op)
    }

    pub fn zip_map(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, MatrixError> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::new_unchecked(self.rows, self.cols, data).checked(op)
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row_vector(&self, v: &[f64]) -> Result<Self, MatrixError> {
        if v.len() != self.cols {
            return Err(MatrixError::ShapeMismatch {
                op: "add_row_vector",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: 1,
                rhs_cols: v.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            for (a, b) in self.row(r).iter().zip(v) {
                data.push(a + b);
            }
        }
        Matrix::new_unchecked(self.rows, self.cols, data).checked("add_row_vector")
    }

    /// Per-column sums, accumulated row by row.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Row-wise softmax with max subtraction; stable for any finite input.
    pub fn softmax_rows(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            let row = self.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut sum = 0.0;
            for &v in row {
                let e = (v - max).exp();
                data.push(e);
                sum += e;
            }
            for v in &mut data[start..] {
                *v /= sum;
            }
        }
        Matrix::new_unchecked(self.rows, self.cols, data)
    }

    /// Backpropagates a gradient through [`Matrix::softmax_rows`].
    ///
    /// `probs` must be the softmax output; `dprobs` the upstream gradient.
    /// Row-wise: `dlogit_c = p_c * (dprob_c - sum_j dprob_j * p_j)`.
    pub fn softmax_backward(probs: &Self, dprobs: &Self) -> Result<Self, MatrixError> {
        probs.same_shape(dprobs, "softmax_backward")?;
        let mut data = Vec::with_capacity(probs.data.len());
        for r in 0..probs.rows {
            let p = probs.row(r);
            let d = dprobs.row(r);
            let mut dot = 0.0;
            for (&pi, &di) in p.iter().zip(d) {
                dot += pi * di;
            }
            for (&pi, &di) in p.iter().zip(d) {
                data.push(pi * (di - dot));
            }
        }
        Matrix::new_unchecked(probs.rows, probs.cols, data).checked("softmax_backward")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let got = Matrix::identity(2).matmul(&a).unwrap();
        assert_eq!(got, a);
    }

    #[test]
    fn matmul_projector() {
        let p = mat(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = mat(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let got = p.matmul(&b).unwrap();
        assert_eq!(got, mat(&[&[5.0, 6.0], &[0.0, 0.0]]));
    }

    #[test]
    fn matmul_hand_example() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let v = mat(&[&[1.0], &[1.0]]);
        let got = a.matmul(&v).unwrap();
        assert_eq!(got, mat(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(MatrixError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = mat(&[&[1.0, -2.0, 0.5], &[0.25, 3.0, -1.0]]);
        let b = mat(&[&[2.0, 1.0], &[0.0, -1.0], &[4.0, 0.5]]);
        let tn = a.matmul_tn(&mat(&[&[1.0, 0.0], &[2.0, 1.0]])).unwrap();
        assert_eq!(
            tn,
            a.transpose()
                .matmul(&mat(&[&[1.0, 0.0], &[2.0, 1.0]]))
                .unwrap()
        );
        let nt = a.matmul_nt(&b.transpose()).unwrap();
        assert_eq!(nt, a.matmul(&b).unwrap());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(MatrixError::NonFinite { .. })
        ));
        let big = Matrix::filled(1, 1, 1e308).unwrap();
        assert!(matches!(
            big.add(&big),
            Err(MatrixError::NonFinite { op: "add" })
        ));
    }

    #[test]
    fn softmax_symmetric_row() {
        let m = mat(&[&[0.0, 0.0]]);
        let p = m.softmax_rows();
        assert_eq!(p.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_extreme_logits_stable() {
        let m = mat(&[&[1000.0, 0.0]]);
        let p = m.softmax_rows();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.get(0, 1).abs() < 1e-12);
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_hand_example() {
        let m = mat(&[&[0.0, 3.0_f64.ln()]]);
        let p = m.softmax_rows();
        assert!((p.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn column_sums_and_bias_add() {
        let m = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(m.column_sums(), vec![4.0, 6.0]);
        let shifted = m.add_row_vector(&[10.0, 20.0]).unwrap();
        assert_eq!(shifted, mat(&[&[11.0, 22.0], &[13.0, 24.0]]));
    }
}
