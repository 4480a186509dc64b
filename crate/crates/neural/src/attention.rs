//! Scaled dot-product attention with grouped key/value heads and an
//! optional sliding window.
//!
//! Query head `h` reads key/value head `h / (n_heads / n_kv_heads)`, so
//! `n_kv_heads == n_heads` is ordinary multi-head attention. Masked keys are
//! left out of the softmax entirely, which is the same as adding `-∞` to
//! their scores.

use num_traits::Float;

use crate::error::{shape, NeuralError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
}

impl AttnShape {
    pub fn q_width(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    fn group(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.n_kv_heads == 0 || self.head_dim == 0 || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(NeuralError::InvalidConfig(format!("bad attention shape {self:?}")));
        }
        Ok(())
    }
}

/// Which keys a query may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttnMask {
    /// Sliding window `W`: keys with `|i - j| <= W` (or `i - W <= j <= i`
    /// when causal). `None` is unlimited.
    pub window: Option<usize>,
    pub causal: bool,
}

impl AttnMask {
    pub fn allows(&self, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        self.window.is_none_or(|w| i.abs_diff(j) <= w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnOutput<T> {
    /// `n_queries × n_heads · head_dim`.
    pub context: Vec<T>,
    /// Attention weights, indexed `[query][head][key]`; masked keys are 0.
    pub probs: Vec<T>,
}

fn seq_dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `softmax(q kᵀ / √head_dim + mask) v` per head.
///
/// `q` holds one row per query with absolute positions `q_pos`; `k` and `v`
/// hold `n_keys` rows for positions `0..n_keys`.
pub fn attention<T: Float>(
    shape_: AttnShape,
    mask: AttnMask,
    q: &[T],
    q_pos: &[usize],
    k: &[T],
    v: &[T],
    n_keys: usize,
) -> Result<AttnOutput<T>> {
    shape_.validate()?;
    let (qw, kw, dh) = (shape_.q_width(), shape_.kv_width(), shape_.head_dim);
    if q.len() != q_pos.len() * qw {
        return Err(shape("attention queries", q_pos.len() * qw, q.len()));
    }
    if k.len() != n_keys * kw || v.len() != n_keys * kw {
        return Err(shape("attention keys/values", n_keys * kw, k.len().max(v.len())));
    }
    let scale = T::one() / T::from(dh).expect("small integer").sqrt();
    let nq = q_pos.len();
    let mut context = vec![T::zero(); nq * qw];
    let mut probs = vec![T::zero(); nq * shape_.n_heads * n_keys];
    for (qi, &pos) in q_pos.iter().enumerate() {
        for h in 0..shape_.n_heads {
            let g = h / shape_.group();
            let qv = &q[qi * qw + h * dh..qi * qw + (h + 1) * dh];
            let p = &mut probs[(qi * shape_.n_heads + h) * n_keys..(qi * shape_.n_heads + h + 1) * n_keys];
            let mut max = T::neg_infinity();
            for j in 0..n_keys {
                if mask.allows(pos, j) {
                    let s = seq_dot(qv, &k[j * kw + g * dh..j * kw + (g + 1) * dh]) * scale;
                    p[j] = s;
                    if s > max {
                        max = s;
                    }
                }
            }
            if max == T::neg_infinity() {
                return Err(NeuralError::InvalidConfig(format!(
                    "query at position {pos} has no visible keys"
                )));
            }
            let mut sum = T::zero();
            for j in 0..n_keys {
                if mask.allows(pos, j) {
                    let e = (p[j] - max).exp();
                    p[j] = e;
                    sum = sum + e;
                }
            }
            let ctx = &mut context[qi * qw + h * dh..qi * qw + (h + 1) * dh];
            for j in 0..n_keys {
                if mask.allows(pos, j) {
                    p[j] = p[j] / sum;
                    let vr = &v[j * kw + g * dh..j * kw + (g + 1) * dh];
                    for (c, &x) in ctx.iter_mut().zip(vr) {
                        *c = *c + p[j] * x;
                    }
                }
            }
        }
    }
    Ok(AttnOutput { context, probs })
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`, given the
/// forward weights and the gradient of the context.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Float>(
    shape_: AttnShape,
    q: &[T],
    n_queries: usize,
    k: &[T],
    v: &[T],
    n_keys: usize,
    probs: &[T],
    d_context: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (qw, kw, dh) = (shape_.q_width(), shape_.kv_width(), shape_.head_dim);
    let scale = T::one() / T::from(dh).expect("small integer").sqrt();
    let mut dq = vec![T::zero(); n_queries * qw];
    let mut dk = vec![T::zero(); n_keys * kw];
    let mut dv = vec![T::zero(); n_keys * kw];
    let mut dp = vec![T::zero(); n_keys];
    for qi in 0..n_queries {
        for h in 0..shape_.n_heads {
            let g = h / shape_.group();
            let p = &probs[(qi * shape_.n_heads + h) * n_keys..(qi * shape_.n_heads + h + 1) * n_keys];
            let dc = &d_context[qi * qw + h * dh..qi * qw + (h + 1) * dh];
            let mut weighted = T::zero();
            for j in 0..n_keys {
                if p[j] == T::zero() {
                    dp[j] = T::zero();
                    continue;
                }
                let vr = &v[j * kw + g * dh..j * kw + (g + 1) * dh];
                dp[j] = seq_dot(dc, vr);
                weighted = weighted + p[j] * dp[j];
                let dvr = &mut dv[j * kw + g * dh..j * kw + (g + 1) * dh];
                for (d, &c) in dvr.iter_mut().zip(dc) {
                    *d = *d + p[j] * c;
                }
            }
            let qv = &q[qi * qw + h * dh..qi * qw + (h + 1) * dh];
            for j in 0..n_keys {
                if p[j] == T::zero() {
                    continue;
                }
                let ds = p[j] * (dp[j] - weighted) * scale;
                let kr = &k[j * kw + g * dh..j * kw + (g + 1) * dh];
                let dqv = &mut dq[qi * qw + h * dh..qi * qw + (h + 1) * dh];
                for (d, &x) in dqv.iter_mut().zip(kr) {
                    *d = *d + ds * x;
                }
                let dkr = &mut dk[j * kw + g * dh..j * kw + (g + 1) * dh];
                for (d, &x) in dkr.iter_mut().zip(qv) {
                    *d = *d + ds * x;
                }
            }
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MHA1: AttnShape = AttnShape { n_heads: 1, n_kv_heads: 1, head_dim: 2 };

    #[test]
    fn single_position_returns_its_value() {
        let out = attention(MHA1, AttnMask::default(), &[0.3f64, -0.2], &[0], &[1.0, 2.0], &[5.0, -7.0], 1).unwrap();
        assert_eq!(out.context, vec![5.0, -7.0]);
        assert_eq!(out.probs, vec![1.0]);
    }

    #[test]
    fn masks() {
        let m = AttnMask { window: Some(2), causal: false };
        assert!(m.allows(5, 3) && m.allows(5, 7) && !m.allows(5, 8));
        let c = AttnMask { window: Some(2), causal: true };
        assert!(c.allows(5, 3) && !c.allows(5, 6) && !c.allows(5, 2));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let s = AttnShape { n_heads: 2, n_kv_heads: 1, head_dim: 2 };
        let q = [0.1f64, 0.2, -0.3, 0.4, 1.0, 0.0, 0.0, 1.0];
        let k = [0.5, -0.5, 0.2, 0.1, -1.0, 0.3];
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let out = attention(s, AttnMask { window: Some(1), causal: false }, &q, &[0, 2], &k, &v, 3).unwrap();
        for row in out.probs.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Query at position 0 with window 1 cannot see key 2.
        assert_eq!(out.probs[2], 0.0);
    }
}
