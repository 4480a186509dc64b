//! Pre-norm transformer encoder with rotary embeddings, grouped-query and
//! sliding-window attention, a SiLU MLP, and low-rank adapters on any of its
//! projection matrices.
//!
//! Each block computes
//!
//! ```text
//! a = rmsnorm(x);  x' = x + Wo · attn(rope(Wq a), rope(Wk a), Wv a)
//! m = rmsnorm(x'); y  = x' + Wdown · silu(Wup m)
//! ```
//!
//! and the classifier applies `head · rmsnorm(x_pool) + bias` to the pooled
//! position. RMS normalization has no learned gain.
//!
//! An adapted matrix `M₀ ∈ R^{d×k}` computes `h = M₀x + (α/r)·M_A M_B x` with
//! `M_A ∈ R^{d×r}` and `M_B ∈ R^{r×k}`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use threatbench_core::seed;
use threatbench_core::tokenizer::TokenSequence;

use crate::attention::{attention, attention_backward, AttnMask, AttnShape};
use crate::config::TransformerConfig;
use crate::error::{shape, NeuralError, Result};
use crate::rope::{rope_apply, rope_apply_inverse};
use crate::tensor::{accumulate_dtx, matmul_dw, matmul_xwt, Matrix};

/// A projection matrix inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Query,
    Key,
    Value,
    Output,
    MlpUp,
    MlpDown,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::Query,
        Target::Key,
        Target::Value,
        Target::Output,
        Target::MlpUp,
        Target::MlpDown,
    ];
    pub const ATTENTION: [Target; 4] = [Target::Query, Target::Key, Target::Value, Target::Output];

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

impl LayerWeights {
    fn zeros(c: &TransformerConfig) -> Self {
        let (d, kv, ff) = (c.d_model, c.kv_dim(), c.d_ff);
        LayerWeights {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(kv, d),
            wv: Matrix::zeros(kv, d),
            wo: Matrix::zeros(d, d),
            w_up: Matrix::zeros(ff, d),
            w_down: Matrix::zeros(d, ff),
        }
    }

    pub fn get(&self, t: Target) -> &Matrix {
        match t {
            Target::Query => &self.wq,
            Target::Key => &self.wk,
            Target::Value => &self.wv,
            Target::Output => &self.wo,
            Target::MlpUp => &self.w_up,
            Target::MlpDown => &self.w_down,
        }
    }

    pub fn get_mut(&mut self, t: Target) -> &mut Matrix {
        match t {
            Target::Query => &mut self.wq,
            Target::Key => &mut self.wk,
            Target::Value => &mut self.wv,
            Target::Output => &mut self.wo,
            Target::MlpUp => &mut self.w_up,
            Target::MlpDown => &mut self.w_down,
        }
    }
}

/// Base model. The classifier head is always trainable; the embedding table
/// and block matrices are trainable only when `frozen` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseWeights {
    pub config: TransformerConfig,
    /// Freezes the embedding table and every block matrix.
    pub frozen: bool,
    /// `vocab_size × d_model`.
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    /// `n_classes × d_model`.
    pub head: Matrix,
    pub head_bias: Vec<f32>,
}

impl BaseWeights {
    /// Parameters in the embedding table and blocks (excluding the head).
    pub fn frozen_parameter_count(&self) -> usize {
        self.embedding.len()
            + self
                .layers
                .iter()
                .map(|l| Target::ALL.iter().map(|&t| l.get(t).len()).sum::<usize>())
                .sum::<usize>()
    }

    pub fn head_parameter_count(&self) -> usize {
        self.head.len() + self.head_bias.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.frozen_parameter_count() + self.head_parameter_count()
    }

    /// FNV-1a hash over the bit patterns of every frozen tensor.
    pub fn frozen_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |m: &Matrix| {
            for v in &m.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        };
        feed(&self.embedding);
        for l in &self.layers {
            for t in Target::ALL {
                feed(l.get(t));
            }
        }
        h
    }
}

fn gaussian_matrix(rows: usize, cols: usize, dist: &Normal<f32>, rng: &mut seed::Rng) -> Matrix {
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    }
}

/// Gaussian weights with standard deviation `1/√d_model`, drawn in a fixed
/// order from a stream derived from `seed`. The head bias starts at zero.
pub fn init_base(config: &TransformerConfig, seed: u64) -> Result<BaseWeights> {
    config.validate()?;
    let mut rng = seed::rng_for(seed, &[seed::tag("init-base")]);
    let std = 1.0 / (config.d_model as f32).sqrt();
    let dist = Normal::new(0.0f32, std).expect("positive std");
    let (d, kv, ff) = (config.d_model, config.kv_dim(), config.d_ff);
    let embedding = gaussian_matrix(config.vocab_size, d, &dist, &mut rng);
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            wq: gaussian_matrix(d, d, &dist, &mut rng),
            wk: gaussian_matrix(kv, d, &dist, &mut rng),
            wv: gaussian_matrix(kv, d, &dist, &mut rng),
            wo: gaussian_matrix(d, d, &dist, &mut rng),
            w_up: gaussian_matrix(ff, d, &dist, &mut rng),
            w_down: gaussian_matrix(d, ff, &dist, &mut rng),
        })
        .collect();
    let head = gaussian_matrix(config.n_classes, d, &dist, &mut rng);
    Ok(BaseWeights {
        config: config.clone(),
        frozen: true,
        embedding,
        layers,
        head,
        head_bias: vec![0.0; config.n_classes],
    })
}

/// Which LoRA factor starts at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoraInit {
    /// `M_A = 0`, `M_B ~ N(0, σ²)`.
    #[default]
    ZeroA,
    /// `M_A ~ N(0, σ²)`, `M_B = 0`.
    ZeroB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f32,
    pub targets: Vec<Target>,
    pub init: LoraInit,
    pub init_std: f32,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 16.0,
            targets: Target::ATTENTION.to_vec(),
            init: LoraInit::ZeroA,
            init_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub layer: usize,
    pub target: Target,
    pub rank: usize,
    pub alpha: f32,
    /// `M_A`, `d × r`.
    pub a: Matrix,
    /// `M_B`, `r × k`.
    pub b: Matrix,
}

impl LoraAdapter {
    pub fn scale(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    pub fn parameter_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `(α/r) · M_A M_B`, `d × k`.
    pub fn delta(&self) -> Matrix {
        let s = self.scale();
        let mut out = Matrix::zeros(self.a.rows, self.b.cols);
        for i in 0..self.a.rows {
            let row = &mut out.data[i * self.b.cols..(i + 1) * self.b.cols];
            for (j, &aij) in self.a.row(i).iter().enumerate() {
                if aij != 0.0 {
                    crate::tensor::axpy(s * aij, self.b.row(j), row);
                }
            }
        }
        out
    }
}

/// One adapter per `(layer, target)` in `cfg`, ordered by layer then
/// target.
pub fn attach_adapters(base: &BaseWeights, cfg: &LoraConfig, seed: u64) -> Result<Vec<LoraAdapter>> {
    if cfg.rank == 0 || !(cfg.alpha.is_finite()) || !(cfg.init_std >= 0.0) {
        return Err(NeuralError::InvalidConfig(format!("bad LoRA settings {cfg:?}")));
    }
    let mut targets = cfg.targets.clone();
    targets.sort();
    targets.dedup();
    let dist = Normal::new(0.0f32, cfg.init_std).expect("non-negative std");
    let mut rng = seed::rng_for(seed, &[seed::tag("lora-init")]);
    let mut out = Vec::new();
    for (li, layer) in base.layers.iter().enumerate() {
        for &t in &targets {
            let m = layer.get(t);
            let (d, k) = (m.rows, m.cols);
            if cfg.rank > d.min(k) {
                return Err(NeuralError::InvalidConfig(format!(
                    "rank {} exceeds min({d}, {k}) for {t:?}",
                    cfg.rank
                )));
            }
            let (a, b) = match cfg.init {
                LoraInit::ZeroA => (Matrix::zeros(d, cfg.rank), gaussian_matrix(cfg.rank, k, &dist, &mut rng)),
                LoraInit::ZeroB => (gaussian_matrix(d, cfg.rank, &dist, &mut rng), Matrix::zeros(cfg.rank, k)),
            };
            out.push(LoraAdapter {
                layer: li,
                target: t,
                rank: cfg.rank,
                alpha: cfg.alpha,
                a,
                b,
            });
        }
    }
    Ok(out)
}

/// Adapter lookup by `(layer, target)`.
struct AdapterIndex {
    slots: Vec<[Option<usize>; 6]>,
}

impl AdapterIndex {
    fn build(base: &BaseWeights, adapters: &[LoraAdapter]) -> Result<Self> {
        let mut slots = vec![[None; 6]; base.layers.len()];
        for (i, ad) in adapters.iter().enumerate() {
            let layer = base
                .layers
                .get(ad.layer)
                .ok_or_else(|| shape("adapter layer", format!("< {}", base.layers.len()), ad.layer))?;
            let m = layer.get(ad.target);
            let ok = ad.rank > 0
                && ad.a.rows == m.rows
                && ad.a.cols == ad.rank
                && ad.b.rows == ad.rank
                && ad.b.cols == m.cols;
            if !ok {
                return Err(shape(
                    &format!("adapter for layer {} {:?}", ad.layer, ad.target),
                    format!("M_A {}x{}, M_B {}x{}", m.rows, ad.rank, ad.rank, m.cols),
                    format!("M_A {}x{}, M_B {}x{}", ad.a.rows, ad.a.cols, ad.b.rows, ad.b.cols),
                ));
            }
            let slot = &mut slots[ad.layer][ad.target.slot()];
            if slot.is_some() {
                return Err(NeuralError::InvalidConfig(format!(
                    "two adapters target layer {} {:?}",
                    ad.layer, ad.target
                )));
            }
            *slot = Some(i);
        }
        Ok(AdapterIndex { slots })
    }

    fn get<'a>(&self, adapters: &'a [LoraAdapter], layer: usize, t: Target) -> Option<&'a LoraAdapter> {
        self.slots[layer][t.slot()].map(|i| &adapters[i])
    }
}

pub fn validate_adapters(base: &BaseWeights, adapters: &[LoraAdapter]) -> Result<()> {
    AdapterIndex::build(base, adapters).map(|_| ())
}

fn apply_deltas(base: &BaseWeights, adapters: &[LoraAdapter], sign: f32) -> Result<BaseWeights> {
    validate_adapters(base, adapters)?;
    let mut out = base.clone();
    for ad in adapters {
        let delta = ad.delta();
        let m = out.layers[ad.layer].get_mut(ad.target);
        for (w, d) in m.data.iter_mut().zip(&delta.data) {
            *w += sign * d;
        }
    }
    Ok(out)
}

/// `M₀ ← M₀ + (α/r) M_A M_B` for every adapter.
pub fn lora_merge(base: &BaseWeights, adapters: &[LoraAdapter]) -> Result<BaseWeights> {
    apply_deltas(base, adapters, 1.0)
}

/// Inverse of [`lora_merge`], up to rounding.
pub fn lora_unmerge(base: &BaseWeights, adapters: &[LoraAdapter]) -> Result<BaseWeights> {
    apply_deltas(base, adapters, -1.0)
}

fn rmsnorm(x: &[f32], d: usize, eps: f32) -> (Vec<f32>, Vec<f32>) {
    let mut y = vec![0.0; x.len()];
    let mut inv = Vec::with_capacity(x.len() / d);
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let ms = crate::tensor::dot(xr, xr) / d as f32;
        let r = 1.0 / (ms + eps).sqrt();
        for (o, &v) in yr.iter_mut().zip(xr) {
            *o = v * r;
        }
        inv.push(r);
    }
    (y, inv)
}

/// `dx = r (dy - y · mean(dy ⊙ y))` per row.
fn rmsnorm_backward(dy: &[f32], y: &[f32], inv: &[f32], d: usize) -> Vec<f32> {
    let mut dx = vec![0.0; dy.len()];
    for (((dyr, yr), dxr), &r) in dy.chunks_exact(d).zip(y.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).zip(inv) {
        let m = crate::tensor::dot(dyr, yr) / d as f32;
        for ((o, &g), &v) in dxr.iter_mut().zip(dyr).zip(yr) {
            *o = r * (g - v * m);
        }
    }
    dx
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `X M₀ᵀ + s (X M_Bᵀ) M_Aᵀ`; also returns `X M_Bᵀ` for the backward pass.
fn linear(x: &[f32], t: usize, w: &Matrix, ad: Option<&LoraAdapter>) -> (Vec<f32>, Option<Vec<f32>>) {
    let mut y = matmul_xwt(x, t, w);
    match ad {
        None => (y, None),
        Some(ad) => {
            let xb = matmul_xwt(x, t, &ad.b);
            let delta = matmul_xwt(&xb, t, &ad.a);
            let s = ad.scale();
            for (yi, di) in y.iter_mut().zip(&delta) {
                *yi += s * di;
            }
            (y, Some(xb))
        }
    }
}

/// Gradient buffers for one adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub a: Matrix,
    pub b: Matrix,
}

/// Gradients of the loss with respect to every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    /// In the order of the adapter list.
    pub adapters: Vec<AdapterGrad>,
    pub head: Matrix,
    pub head_bias: Vec<f32>,
    /// Embedding and block gradients; present only for full fine-tuning.
    pub base: Option<BaseGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseGrads {
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
}

impl Grads {
    pub fn zeros(base: &BaseWeights, adapters: &[LoraAdapter], with_base: bool) -> Self {
        Grads {
            adapters: adapters
                .iter()
                .map(|a| AdapterGrad {
                    a: Matrix::zeros(a.a.rows, a.a.cols),
                    b: Matrix::zeros(a.b.rows, a.b.cols),
                })
                .collect(),
            head: Matrix::zeros(base.head.rows, base.head.cols),
            head_bias: vec![0.0; base.head_bias.len()],
            base: with_base.then(|| BaseGrads {
                embedding: Matrix::zeros(base.embedding.rows, base.embedding.cols),
                layers: base.layers.iter().map(|_| LayerWeights::zeros(&base.config)).collect(),
            }),
        }
    }
}

struct LinearGradSink<'a> {
    adapter: Option<(&'a LoraAdapter, &'a [f32], &'a mut AdapterGrad)>,
    weight: Option<&'a mut Matrix>,
}

/// Backward through [`linear`]: accumulates parameter gradients and returns
/// the input gradient when asked.
fn linear_backward(dy: &[f32], x: &[f32], t: usize, w: &Matrix, sink: LinearGradSink<'_>, need_dx: bool) -> Option<Vec<f32>> {
    if let Some(wg) = sink.weight {
        accumulate_dtx(wg, 1.0, dy, x, t);
    }
    let mut lora_dx = None;
    if let Some((ad, xb, g)) = sink.adapter {
        let s = ad.scale();
        accumulate_dtx(&mut g.a, s, dy, xb, t);
        let u = matmul_dw(dy, t, &ad.a);
        accumulate_dtx(&mut g.b, s, &u, x, t);
        if need_dx {
            lora_dx = Some((s, matmul_dw(&u, t, &ad.b)));
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = matmul_dw(dy, t, w);
    if let Some((s, extra)) = lora_dx {
        for (o, e) in dx.iter_mut().zip(&extra) {
            *o += s * e;
        }
    }
    Some(dx)
}

struct LayerCache {
    t: usize,
    q_rows: Vec<usize>,
    a: Vec<f32>,
    inv_a: Vec<f32>,
    a_q: Vec<f32>,
    xb: [Option<Vec<f32>>; 6],
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    probs: Vec<f32>,
    ctx: Vec<f32>,
    m: Vec<f32>,
    inv_m: Vec<f32>,
    u: Vec<f32>,
    gate: Vec<f32>,
}

/// Forward state needed by [`backward`].
pub struct Cache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    pooled_norm: Vec<f32>,
    pooled_inv: f32,
}

fn gather_rows(x: &[f32], d: usize, rows: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    out
}

fn attn_shape(c: &TransformerConfig) -> AttnShape {
    AttnShape {
        n_heads: c.n_heads,
        n_kv_heads: c.n_kv_heads,
        head_dim: c.head_dim(),
    }
}

fn attn_mask(c: &TransformerConfig) -> AttnMask {
    AttnMask {
        window: c.swa_window,
        causal: c.causal,
    }
}

fn layer_forward(
    base: &BaseWeights,
    adapters: &[LoraAdapter],
    index: &AdapterIndex,
    li: usize,
    x: &[f32],
    t: usize,
    q_rows: Vec<usize>,
) -> Result<(Vec<f32>, LayerCache)> {
    let c = &base.config;
    let d = c.d_model;
    let w = &base.layers[li];
    let ad = |tg: Target| index.get(adapters, li, tg);
    let nq = q_rows.len();

    let (a, inv_a) = rmsnorm(x, d, c.norm_eps);
    let a_q = if nq == t { a.clone() } else { gather_rows(&a, d, &q_rows) };
    let (mut q, xb_q) = linear(&a_q, nq, &w.wq, ad(Target::Query));
    let (mut k, xb_k) = linear(&a, t, &w.wk, ad(Target::Key));
    let (v, xb_v) = linear(&a, t, &w.wv, ad(Target::Value));
    let key_pos: Vec<usize> = (0..t).collect();
    rope_apply(&mut q, &q_rows, c.n_heads, c.head_dim(), c.rope_base)?;
    rope_apply(&mut k, &key_pos, c.n_kv_heads, c.head_dim(), c.rope_base)?;
    let att = attention(attn_shape(c), attn_mask(c), &q, &q_rows, &k, &v, t)?;
    let (o, xb_o) = linear(&att.context, nq, &w.wo, ad(Target::Output));

    let mut x_mid = gather_rows(x, d, &q_rows);
    for (xm, oi) in x_mid.iter_mut().zip(&o) {
        *xm += oi;
    }
    let (m, inv_m) = rmsnorm(&x_mid, d, c.norm_eps);
    let (u, xb_up) = linear(&m, nq, &w.w_up, ad(Target::MlpUp));
    let gate: Vec<f32> = u.iter().map(|&z| z * sigmoid(z)).collect();
    let (y, xb_down) = linear(&gate, nq, &w.w_down, ad(Target::MlpDown));
    let mut out = x_mid;
    for (xo, yi) in out.iter_mut().zip(&y) {
        *xo += yi;
    }
    Ok((
        out,
        LayerCache {
            t,
            q_rows,
            a,
            inv_a,
            a_q,
            xb: [xb_q, xb_k, xb_v, xb_o, xb_up, xb_down],
            q,
            k,
            v,
            probs: att.probs,
            ctx: att.context,
            m,
            inv_m,
            u,
            gate,
        },
    ))
}

/// Position the classifier reads: the CLS token in bidirectional mode, the
/// last non-padding token in causal mode.
pub fn pool_position(config: &TransformerConfig, active_len: usize) -> usize {
    if config.causal {
        active_len - 1
    } else {
        0
    }
}

fn check_ids(base: &BaseWeights, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(NeuralError::Empty("token sequence has no active positions".into()));
    }
    if ids.len() > base.config.max_len {
        return Err(shape("sequence length", format!("<= {}", base.config.max_len), ids.len()));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= base.config.vocab_size) {
        return Err(NeuralError::TokenOutOfRange {
            id: bad,
            vocab: base.config.vocab_size,
        });
    }
    Ok(())
}

fn forward_impl(base: &BaseWeights, adapters: &[LoraAdapter], index: &AdapterIndex, ids: &[u32]) -> Result<(Vec<f32>, Cache)> {
    check_ids(base, ids)?;
    let c = &base.config;
    let d = c.d_model;
    let t = ids.len();
    let mut x = Vec::with_capacity(t * d);
    for &id in ids {
        x.extend_from_slice(base.embedding.row(id as usize));
    }
    let pool = pool_position(c, t);
    let mut caches = Vec::with_capacity(c.n_layers);
    for li in 0..c.n_layers {
        // Only the pooled row feeds the head, so the last block computes
        // queries, the MLP and the residual for that row alone.
        let q_rows: Vec<usize> = if li + 1 == c.n_layers { vec![pool] } else { (0..t).collect() };
        let (out, cache) = layer_forward(base, adapters, index, li, &x, t, q_rows)?;
        x = out;
        caches.push(cache);
    }
    let (hn, inv) = rmsnorm(&x, d, c.norm_eps);
    let mut logits = matmul_xwt(&hn, 1, &base.head);
    for (l, b) in logits.iter_mut().zip(&base.head_bias) {
        *l += b;
    }
    Ok((
        logits,
        Cache {
            ids: ids.to_vec(),
            layers: caches,
            pooled_norm: hn,
            pooled_inv: inv[0],
        },
    ))
}

/// Class logits for the active (non-padding) prefix of `tokens`.
pub fn forward(base: &BaseWeights, adapters: &[LoraAdapter], tokens: &TokenSequence) -> Result<Vec<f32>> {
    forward_ids(base, adapters, tokens.active())
}

pub fn forward_ids(base: &BaseWeights, adapters: &[LoraAdapter], ids: &[u32]) -> Result<Vec<f32>> {
    let index = AdapterIndex::build(base, adapters)?;
    forward_impl(base, adapters, &index, ids).map(|(l, _)| l)
}

/// Forward pass that keeps what [`backward`] needs.
pub fn forward_with_cache(base: &BaseWeights, adapters: &[LoraAdapter], ids: &[u32]) -> Result<(Vec<f32>, Cache)> {
    let index = AdapterIndex::build(base, adapters)?;
    forward_impl(base, adapters, &index, ids)
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    base: &BaseWeights,
    adapters: &[LoraAdapter],
    index: &AdapterIndex,
    li: usize,
    cache: &LayerCache,
    d_out: &[f32],
    grads: &mut Grads,
    need_dx: bool,
) -> Result<Option<Vec<f32>>> {
    let c = &base.config;
    let d = c.d_model;
    let w = &base.layers[li];
    let (t, nq) = (cache.t, cache.q_rows.len());

    // Split the gradient buffers so each projection can borrow its own.
    let mut adapter_grads: [Option<&mut AdapterGrad>; 6] = Default::default();
    {
        let mut remaining: Vec<Option<&mut AdapterGrad>> = grads.adapters.iter_mut().map(Some).collect();
        for tg in Target::ALL {
            if let Some(i) = index.slots[li][tg.slot()] {
                adapter_grads[tg.slot()] = remaining[i].take();
            }
        }
    }
    let mut weight_grads: [Option<&mut Matrix>; 6] = Default::default();
    if let Some(bg) = grads.base.as_mut() {
        let lw = &mut bg.layers[li];
        let LayerWeights { wq, wk, wv, wo, w_up, w_down } = lw;
        weight_grads = [Some(wq), Some(wk), Some(wv), Some(wo), Some(w_up), Some(w_down)];
    }
    let mut sink = |tg: Target| -> LinearGradSink<'_> {
        let slot = tg.slot();
        let adapter = match (index.get(adapters, li, tg), cache.xb[slot].as_deref(), adapter_grads[slot].take()) {
            (Some(ad), Some(xb), Some(g)) => Some((ad, xb, g)),
            _ => None,
        };
        LinearGradSink {
            adapter,
            weight: weight_grads[slot].take(),
        }
    };

    // MLP branch.
    let d_gate = linear_backward(d_out, &cache.gate, nq, &w.w_down, sink(Target::MlpDown), true).expect("requested");
    let d_u: Vec<f32> = d_gate
        .iter()
        .zip(&cache.u)
        .map(|(&g, &z)| {
            let s = sigmoid(z);
            g * s * (1.0 + z * (1.0 - s))
        })
        .collect();
    let d_m = linear_backward(&d_u, &cache.m, nq, &w.w_up, sink(Target::MlpUp), true).expect("requested");
    let mut d_mid = rmsnorm_backward(&d_m, &cache.m, &cache.inv_m, d);
    for (a, b) in d_mid.iter_mut().zip(d_out) {
        *a += b;
    }

    // Attention branch.
    let d_ctx = linear_backward(&d_mid, &cache.ctx, nq, &w.wo, sink(Target::Output), true).expect("requested");
    let (mut dq, mut dk, dv) =
        attention_backward(attn_shape(c), &cache.q, nq, &cache.k, &cache.v, t, &cache.probs, &d_ctx);
    let key_pos: Vec<usize> = (0..t).collect();
    rope_apply_inverse(&mut dq, &cache.q_rows, c.n_heads, c.head_dim(), c.rope_base)?;
    rope_apply_inverse(&mut dk, &key_pos, c.n_kv_heads, c.head_dim(), c.rope_base)?;

    let d_aq = linear_backward(&dq, &cache.a_q, nq, &w.wq, sink(Target::Query), need_dx);
    let d_ak = linear_backward(&dk, &cache.a, t, &w.wk, sink(Target::Key), need_dx);
    let d_av = linear_backward(&dv, &cache.a, t, &w.wv, sink(Target::Value), need_dx);
    if !need_dx {
        return Ok(None);
    }
    let mut d_a = d_ak.expect("requested");
    for (o, x) in d_a.iter_mut().zip(&d_av.expect("requested")) {
        *o += x;
    }
    let d_aq = d_aq.expect("requested");
    for (qi, &row) in cache.q_rows.iter().enumerate() {
        for (o, x) in d_a[row * d..(row + 1) * d].iter_mut().zip(&d_aq[qi * d..(qi + 1) * d]) {
            *o += x;
        }
    }
    let mut d_in = rmsnorm_backward(&d_a, &cache.a, &cache.inv_a, d);
    for (qi, &row) in cache.q_rows.iter().enumerate() {
        for (o, x) in d_in[row * d..(row + 1) * d].iter_mut().zip(&d_mid[qi * d..(qi + 1) * d]) {
            *o += x;
        }
    }
    Ok(Some(d_in))
}

/// Accumulate into `grads` the gradient of a loss whose derivative with
/// respect to this example's logits is `d_logits`.
pub fn backward(
    base: &BaseWeights,
    adapters: &[LoraAdapter],
    cache: &Cache,
    d_logits: &[f32],
    grads: &mut Grads,
) -> Result<()> {
    let c = &base.config;
    if d_logits.len() != c.n_classes {
        return Err(shape("logit gradient", c.n_classes, d_logits.len()));
    }
    let index = AdapterIndex::build(base, adapters)?;
    let d = c.d_model;
    accumulate_dtx(&mut grads.head, 1.0, d_logits, &cache.pooled_norm, 1);
    for (g, &dl) in grads.head_bias.iter_mut().zip(d_logits) {
        *g += dl;
    }
    let d_norm = matmul_dw(d_logits, 1, &base.head);
    let mut d_x = rmsnorm_backward(&d_norm, &cache.pooled_norm, &[cache.pooled_inv], d);
    let full = grads.base.is_some();
    for li in (0..c.n_layers).rev() {
        let need_dx = li > 0 || full;
        match layer_backward(base, adapters, &index, li, &cache.layers[li], &d_x, grads, need_dx)? {
            Some(dx) => d_x = dx,
            None => break,
        }
    }
    if let Some(bg) = grads.base.as_mut() {
        for (pos, &id) in cache.ids.iter().enumerate() {
            let row = &mut bg.embedding.data[id as usize * d..(id as usize + 1) * d];
            for (o, x) in row.iter_mut().zip(&d_x[pos * d..(pos + 1) * d]) {
                *o += x;
            }
        }
    }
    Ok(())
}
