//! Dense row-major matrices and the handful of kernels the network needs.
//!
//! Everything is f64 and single-threaded. Inner loops run over contiguous
//! row slices, and the dot product accumulates in four lanes, which is
//! enough for the toy model sizes this crate trains.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Dot product with four accumulators so the summation order is fixed and
/// the loop still pipelines.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// y += alpha * x over contiguous slices.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// out = a * w^T, where a is T x k and w is n x k: the forward projection
/// through a weight stored as (out x in).
pub fn matmul_nt(a: &Mat, w: &Mat, out: &mut Mat) {
    debug_assert_eq!(a.cols, w.cols);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, w.rows);
    for t in 0..a.rows {
        let ar = a.row(t);
        let or = out.row_mut(t);
        for (o, slot) in or.iter_mut().enumerate() {
            *slot = dot(ar, w.row(o));
        }
    }
}

/// out = dy * w, where dy is T x n and w is n x k: pushes output gradients
/// back to the input side of the same projection.
pub fn matmul_nn(dy: &Mat, w: &Mat, out: &mut Mat) {
    debug_assert_eq!(dy.cols, w.rows);
    debug_assert_eq!(out.rows, dy.rows);
    debug_assert_eq!(out.cols, w.cols);
    out.fill(0.0);
    for t in 0..dy.rows {
        let dyr = dy.row(t);
        let or = out.row_mut(t);
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, w.row(o), or);
            }
        }
    }
}

/// dw += dy^T * a, where dy is T x n and a is T x k: accumulates the weight
/// gradient of the projection.
pub fn accumulate_outer(dy: &Mat, a: &Mat, dw: &mut Mat) {
    debug_assert_eq!(dy.rows, a.rows);
    debug_assert_eq!(dw.rows, dy.cols);
    debug_assert_eq!(dw.cols, a.cols);
    for t in 0..dy.rows {
        let dyr = dy.row(t);
        let ar = a.row(t);
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, ar, dw.row_mut(o));
            }
        }
    }
}

/// Numerically stable in-place softmax over a slice.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// log(softmax(row)[index]) without materializing the softmax.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[index] - max - log_sum
}

/// Root-mean-square normalization without gain: x / sqrt(mean(x^2) + eps).
/// Returns the inverse RMS used, which the backward pass needs.
pub fn rmsnorm_row(x: &[f64], out: &mut [f64]) -> f64 {
    const EPS: f64 = 1e-6;
    let ms = dot(x, x) / x.len() as f64;
    let inv = 1.0 / (ms + EPS).sqrt();
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = xi * inv;
    }
    inv
}

/// Backward of [`rmsnorm_row`]: given x, the saved inverse RMS, and the
/// output gradient, accumulates the input gradient.
pub fn rmsnorm_backward_row(x: &[f64], inv: f64, dy: &[f64], dx: &mut [f64]) {
    let n = x.len() as f64;
    let proj = dot(dy, x);
    let k = proj * inv * inv * inv / n;
    for ((d, &xi), &g) in dx.iter_mut().zip(x).zip(dy) {
        *d += g * inv - xi * k;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn matmul_pair_inverts_shapes() {
        let a = Mat::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.1);
        let w = Mat::from_fn(5, 4, |r, c| ((r + c) % 3) as f64 - 1.0);
        let mut y = Mat::zeros(3, 5);
        matmul_nt(&a, &w, &mut y);
        // y[t][o] = dot(a.row(t), w.row(o)).
        for t in 0..3 {
            for o in 0..5 {
                assert!((y.row(t)[o] - dot(a.row(t), w.row(o))).abs() < 1e-12);
            }
        }
        let mut back = Mat::zeros(3, 4);
        matmul_nn(&y, &w, &mut back);
        for t in 0..3 {
            for k in 0..4 {
                let expect: f64 = (0..5).map(|o| y.row(t)[o] * w.row(o)[k]).sum();
                assert!((back.row(t)[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outer_accumulation_matches_definition() {
        let dy = Mat::from_fn(2, 3, |r, c| (r + c) as f64);
        let a = Mat::from_fn(2, 4, |r, c| (r * c) as f64 + 1.0);
        let mut dw = Mat::zeros(3, 4);
        accumulate_outer(&dy, &a, &mut dw);
        for o in 0..3 {
            for k in 0..4 {
                let expect: f64 = (0..2).map(|t| dy.row(t)[o] * a.row(t)[k]).sum();
                assert_eq!(dw.row(o)[k], expect);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![1.0, -2.0, 0.5, 300.0];
        softmax_in_place(&mut row);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn log_softmax_agrees_with_softmax() {
        let row = vec![0.3, -1.2, 2.0, 0.0];
        let mut probs = row.clone();
        softmax_in_place(&mut probs);
        for i in 0..row.len() {
            assert!((log_softmax_at(&row, i) - probs[i].ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn rmsnorm_backward_matches_finite_differences() {
        let x = vec![0.4, -1.1, 2.0, 0.3, -0.7];
        let dy = vec![1.0, -0.5, 0.25, 2.0, 0.0];
        let mut out = vec![0.0; 5];
        let inv = rmsnorm_row(&x, &mut out);
        let mut dx = vec![0.0; 5];
        rmsnorm_backward_row(&x, inv, &dy, &mut dx);

        let f = |x: &[f64]| -> f64 {
            let mut y = vec![0.0; x.len()];
            rmsnorm_row(x, &mut y);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6, "component {i}: {fd} vs {}", dx[i]);
        }
    }
}
