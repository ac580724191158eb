//! Minimal dense linear algebra for the model.
//!
//! Everything is `f64` and row-major. The model only needs matrix-vector
//! products (plain and transposed), outer-product accumulation, and a few
//! vector helpers, so that is all this module provides.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix by calling `f(row, col)` for every entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        Mat {
            rows: n_rows,
            cols: n_cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self[r0..r1] * x`: product restricted to a contiguous row band.
    ///
    /// Gated recurrent cells store their three gate blocks stacked in one
    /// matrix; this lets each gate be applied without slicing copies.
    pub fn matvec_rows(&self, r0: usize, r1: usize, x: &[f64]) -> Vec<f64> {
        assert!(r0 <= r1 && r1 <= self.rows);
        assert_eq!(x.len(), self.cols, "matvec_rows dimension mismatch");
        (r0..r1).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * v` for a column vector `v`.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            axpy(&mut out, v[r], self.row(r));
        }
        out
    }

    /// `self[r0..r1]^T * v`: transposed product over a row band.
    pub fn matvec_t_rows(&self, r0: usize, r1: usize, v: &[f64]) -> Vec<f64> {
        assert!(r0 <= r1 && r1 <= self.rows);
        assert_eq!(v.len(), r1 - r0, "matvec_t_rows dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, r) in (r0..r1).enumerate() {
            axpy(&mut out, v[i], self.row(r));
        }
        out
    }

    /// `self += a * b^T` (outer-product accumulation for gradients).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), self.rows, "add_outer row mismatch");
        assert_eq!(b.len(), self.cols, "add_outer col mismatch");
        for r in 0..self.rows {
            axpy(self.row_mut(r), a[r], b);
        }
    }

    /// `self[r0..r0+a.len()] += a * b^T`: outer product into a row band.
    pub fn add_outer_rows(&mut self, r0: usize, a: &[f64], b: &[f64]) {
        assert!(r0 + a.len() <= self.rows, "add_outer_rows out of range");
        assert_eq!(b.len(), self.cols, "add_outer_rows col mismatch");
        for (i, &ai) in a.iter().enumerate() {
            axpy(self.row_mut(r0 + i), ai, b);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    assert_eq!(y.len(), x.len(), "axpy length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn add_assign(y: &mut [f64], x: &[f64]) {
    axpy(y, 1.0, x);
}

/// Numerically stable log(sum(exp(logits))).
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of `logits`, written over the input slice.
pub fn softmax_in_place(logits: &mut [f64]) {
    let lse = log_sum_exp(logits);
    for x in logits.iter_mut() {
        *x = (*x - lse).exp();
    }
}
