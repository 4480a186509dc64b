//! Row-major f32 matrices and the three matrix-product kernels used by the
//! forward and backward passes.
//!
//! A weight `M` of shape `d × k` maps `x ∈ R^k` to `M x ∈ R^d`; activations
//! are stored one position per row, so a batch `X` (`T × k`) maps to
//! `X Mᵀ` (`T × d`).

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape("matrix data", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Dot product with eight independent partial sums, which lets the
/// compiler keep the accumulation in vector registers.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    s + tail
}

#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `X Wᵀ` for `X` of shape `t × w.cols`; result `t × w.rows`.
pub fn matmul_xwt(x: &[f32], t: usize, w: &Matrix) -> Vec<f32> {
    debug_assert_eq!(x.len(), t * w.cols);
    let mut out = vec![0.0; t * w.rows];
    for (xr, or) in x.chunks_exact(w.cols).zip(out.chunks_exact_mut(w.rows)) {
        for (o, wr) in or.iter_mut().zip(w.data.chunks_exact(w.cols)) {
            *o = dot(xr, wr);
        }
    }
    out
}

/// `D W` for `D` of shape `t × w.rows`; result `t × w.cols`.
pub fn matmul_dw(d: &[f32], t: usize, w: &Matrix) -> Vec<f32> {
    debug_assert_eq!(d.len(), t * w.rows);
    let mut out = vec![0.0; t * w.cols];
    for (dr, or) in d.chunks_exact(w.rows).zip(out.chunks_exact_mut(w.cols)) {
        for (&g, wr) in dr.iter().zip(w.data.chunks_exact(w.cols)) {
            if g != 0.0 {
                axpy(g, wr, or);
            }
        }
    }
    out
}

/// `acc += s · Dᵀ X` for `D` (`t × acc.rows`) and `X` (`t × acc.cols`).
pub fn accumulate_dtx(acc: &mut Matrix, s: f32, d: &[f32], x: &[f32], t: usize) {
    debug_assert_eq!(d.len(), t * acc.rows);
    debug_assert_eq!(x.len(), t * acc.cols);
    let cols = acc.cols;
    for (dr, xr) in d.chunks_exact(acc.rows).zip(x.chunks_exact(cols)) {
        for (&g, ar) in dr.iter().zip(acc.data.chunks_exact_mut(cols)) {
            if g != 0.0 {
                axpy(s * g, xr, ar);
            }
        }
    }
}
