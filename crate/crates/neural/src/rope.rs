//! Rotary position embeddings.
//!
//! Within each head, coordinate pair `(2j, 2j+1)` at position `p` is rotated
//! by `p · base^(-2j / head_dim)`. Angles are computed in f64 and rounded to
//! the working precision.

use num_traits::Float;

use crate::error::{shape, NeuralError, Result};

/// Rotation angle of pair `j` at position `pos`.
pub fn rope_angle(pos: usize, j: usize, head_dim: usize, base: f64) -> f64 {
    pos as f64 * base.powf(-2.0 * j as f64 / head_dim as f64)
}

fn rotate<T: Float>(
    x: &mut [T],
    positions: &[usize],
    n_heads: usize,
    head_dim: usize,
    base: f64,
    sign: f64,
) -> Result<()> {
    if !head_dim.is_multiple_of(2) {
        return Err(NeuralError::OddHeadDim(head_dim));
    }
    let width = n_heads * head_dim;
    if x.len() != positions.len() * width {
        return Err(shape("rope input", positions.len() * width, x.len()));
    }
    let half = head_dim / 2;
    let mut cs: Vec<(T, T)> = Vec::with_capacity(half);
    for (row, &pos) in x.chunks_exact_mut(width).zip(positions) {
        cs.clear();
        cs.extend((0..half).map(|j| {
            let a = sign * rope_angle(pos, j, head_dim, base);
            (T::from(a.cos()).expect("finite"), T::from(a.sin()).expect("finite"))
        }));
        for head in row.chunks_exact_mut(head_dim) {
            for (pair, &(c, s)) in head.chunks_exact_mut(2).zip(&cs) {
                let (a, b) = (pair[0], pair[1]);
                pair[0] = a * c - b * s;
                pair[1] = a * s + b * c;
            }
        }
    }
    Ok(())
}

/// Rotate each row of `x` (`positions.len()` rows of `n_heads · head_dim`)
/// in place.
pub fn rope_apply<T: Float>(x: &mut [T], positions: &[usize], n_heads: usize, head_dim: usize, base: f64) -> Result<()> {
    rotate(x, positions, n_heads, head_dim, base, 1.0)
}

/// The inverse (transpose) rotation; maps gradients back through
/// [`rope_apply`].
pub fn rope_apply_inverse<T: Float>(
    x: &mut [T],
    positions: &[usize],
    n_heads: usize,
    head_dim: usize,
    base: f64,
) -> Result<()> {
    rotate(x, positions, n_heads, head_dim, base, -1.0)
}
