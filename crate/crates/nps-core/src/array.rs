//! Dense 64-bit float arrays of rank 1 or 2, plus the handful of
//! deterministic kernels the tape is built on.
//!
//! Kernels accumulate in a fixed index order (ascending k), so results are
//! bit-identical for a given input regardless of how rows are batched or
//! which thread runs them.

use crate::error::{CoreError, Result};
use crate::rng::Mix64;

/// Row-major dense array, rank 1 or 2. A rank-1 array of length n is stored
/// as a 1 x n row.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    rows: usize,
    cols: usize,
    rank: u8,
    data: Vec<f64>,
}

impl Array {
    pub fn vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Array { rows: 1, cols, rank: 1, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Array { rows, cols, rank: 2, data }
    }

    pub fn zeros_vector(n: usize) -> Self {
        Array::vector(vec![0.0; n])
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array::matrix(rows, cols, vec![0.0; rows * cols])
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Array::matrix(rows, cols, vec![1.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Array::matrix(rows, cols, vec![v; rows * cols])
    }

    /// Scalar wrapped as a rank-1, length-1 array.
    pub fn scalar(v: f64) -> Self {
        Array::vector(vec![v])
    }

    /// Uniform values in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn uniform_fanin(rows: usize, cols: usize, fan_in: usize, rng: &mut Mix64) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.next_range(-bound, bound)).collect();
        Array::matrix(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> u8 {
        self.rank
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

    pub fn shape(&self) -> Vec<usize> {
        if self.rank == 1 { vec![self.cols] } else { vec![self.rows, self.cols] }
    }

    pub fn shape_string(&self) -> String {
        if self.rank == 1 { format!("[{}]", self.cols) } else { format!("[{}x{}]", self.rows, self.cols) }
    }

    pub fn same_shape(&self, other: &Array) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.rank == other.rank
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(CoreError::Usage { op: "scalar_value", detail: format!("array has shape {}", self.shape_string()) })
        }
    }

    /// Reinterpret as a different row grouping without moving data.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Array> {
        if rows * cols != self.data.len() {
            return Err(CoreError::Dim {
                op: "reshape",
                left: self.shape_string(),
                right: format!("[{rows}x{cols}]"),
            });
        }
        self.rows = rows;
        self.cols = cols;
        self.rank = 2;
        Ok(self)
    }

    pub fn transposed(&self) -> Array {
        let mut out = Array::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// ── Deterministic kernels ────────────────────────────────────────────

/// c = a (m x k) times b (k x n). Zero entries of `a` are skipped; the skip
/// does not change results for finite operands and makes one-hot row
/// selection effectively free.
pub fn matmul_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *cv += av * bv;
                }
            }
        }
    }
}

/// c = a (m x k) times b^T where b is (n x k).
pub fn matmul_nt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
}

/// c = a^T times b where a is (m x k), b is (m x n), c is (k x n).
pub fn matmul_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    c.fill(0.0);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let crow = &mut c[kk * n..(kk + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *cv += av * bv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut c = vec![0.0; 4];
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let b = vec![1.0, 2.0, 3.0, 4.0];
        matmul_nn(&mut c, &eye, &b, 2, 2, 2);
        assert_eq!(c, b);
    }

    #[test]
    fn matmul_unit_basis_selects() {
        // [[1,0]] x [[2],[5]] = [[2]]
        let mut c = vec![0.0; 1];
        matmul_nn(&mut c, &[1.0, 0.0], &[2.0, 5.0], 1, 2, 1);
        assert_eq!(c, vec![2.0]);
    }

    #[test]
    fn nt_and_tn_match_explicit_transpose() {
        let mut rng = Mix64::new(5);
        let a = Array::uniform_fanin(3, 4, 4, &mut rng);
        let b = Array::uniform_fanin(5, 4, 4, &mut rng);
        // a * b^T via kernel
        let mut c1 = vec![0.0; 15];
        matmul_nt(&mut c1, a.data(), b.data(), 3, 4, 5);
        // a * transpose(b) via nn
        let bt = b.transposed();
        let mut c2 = vec![0.0; 15];
        matmul_nn(&mut c2, a.data(), bt.data(), 3, 4, 5);
        for (x, y) in c1.iter().zip(c2.iter()) {
            assert!((x - y).abs() < 1e-15);
        }

        let d = Array::uniform_fanin(3, 6, 6, &mut rng);
        let mut c3 = vec![0.0; 24];
        matmul_tn(&mut c3, a.data(), d.data(), 3, 4, 6);
        let at = a.transposed();
        let mut c4 = vec![0.0; 24];
        matmul_nn(&mut c4, at.data(), d.data(), 4, 3, 6);
        for (x, y) in c3.iter().zip(c4.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn row_results_independent_of_batching() {
        // Computing rows separately or stacked gives bit-identical rows.
        let mut rng = Mix64::new(9);
        let a = Array::uniform_fanin(6, 7, 7, &mut rng);
        let b = Array::uniform_fanin(7, 5, 7, &mut rng);
        let mut full = vec![0.0; 30];
        matmul_nn(&mut full, a.data(), b.data(), 6, 7, 5);
        for r in 0..6 {
            let mut one = vec![0.0; 5];
            matmul_nn(&mut one, a.row(r), b.data(), 1, 7, 5);
            assert_eq!(&full[r * 5..(r + 1) * 5], &one[..]);
        }
    }
}
