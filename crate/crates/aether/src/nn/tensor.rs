//! Row-major 64-bit matrices and the handful of dense kernels everything
//! else is built from.
//!
//! All kernels are sequential with a fixed summation order, so any caller
//! (batched, tiled, or parallel over rows) produces bit-identical results
//! regardless of thread count.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "expected {}x{} = {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }
}

/// Dot product with eight independent accumulators (vectorizes well) and a
/// fixed reduction tree, so the result does not depend on the call site.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
        acc[4] += xa[4] * xb[4];
        acc[5] += xa[5] * xb[5];
        acc[6] += xa[6] * xb[6];
        acc[7] += xa[7] * xb[7];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `out = w * x` where `w` is rows x cols and `x` has length cols.
pub fn matvec(w: &Tensor2D, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(w.row(r), x);
    }
}

/// `out = w^T * x` where `w` is rows x cols and `x` has length rows.
/// Accumulates row by row so the summation order is fixed.
pub fn matvec_t(w: &Tensor2D, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, x.len());
    debug_assert_eq!(w.cols, out.len());
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, &xr) in x.iter().enumerate() {
        axpy(xr, w.row(r), out);
    }
}

/// Rank-one accumulation `dw += dy * x^T` (`dy` spans rows, `x` spans cols).
pub fn outer_acc(dy: &[f64], x: &[f64], dw: &mut Tensor2D) {
    debug_assert_eq!(dy.len(), dw.rows);
    debug_assert_eq!(x.len(), dw.cols);
    for (r, &g) in dy.iter().enumerate() {
        axpy(g, x, dw.row_mut(r));
    }
}

/// Pairwise (tree) summation. Keeps rounding error at O(log n * eps) so sums
/// over permuted inputs agree to ~1e-12 at the batch sizes used here.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Errors if any value is NaN or infinite, naming the context for diagnostics.
pub fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.31 - 4.0).collect();
        let b: Vec<f64> = (0..37).map(|i| 2.0 - (i as f64) * 0.17).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12 * naive.abs().max(1.0));
    }

    #[test]
    fn matvec_and_transpose_agree_with_indexing() {
        let w = Tensor2D::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = [10.0, 20.0];
        let mut out = [0.0; 3];
        matvec(&w, &x, &mut out);
        assert_eq!(out, [50.0, 110.0, 170.0]);

        let y = [1.0, 1.0, 1.0];
        let mut out_t = [0.0; 2];
        matvec_t(&w, &y, &mut out_t);
        assert_eq!(out_t, [9.0, 12.0]);
    }

    #[test]
    fn pairwise_sum_matches_sequential_closely() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 1e-3).collect();
        let seq: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - seq).abs() < 1e-9);
    }

    #[test]
    fn check_finite_flags_nan() {
        assert!(check_finite("ok", &[1.0, 2.0]).is_ok());
        assert!(check_finite("bad", &[1.0, f64::NAN]).is_err());
    }
}
