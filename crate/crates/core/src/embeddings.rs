//! Word embeddings: skip-gram and CBOW with negative sampling, and a
//! GloVe-style weighted least-squares fit on distance-weighted
//! co-occurrences. Documents are pooled by averaging input vectors.
//!
//! Conventions:
//!
//! - negatives are drawn from the unigram distribution raised to 3/4;
//! - word2vec inputs start uniform in `±0.5/D`, outputs at zero, and the
//!   learning rate decays linearly to `1e-4 * lr`;
//! - GloVe uses AdaGrad with squared-gradient accumulators starting at 1.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DocVector, Producer};
use crate::seed;
use crate::tokenizer::words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainer {
    Cbow,
    Skipgram,
    Glove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
    trainer: Trainer,
    /// Per-term `(main, context)` biases; empty unless trained by GloVe.
    #[serde(default)]
    biases: Vec<(f64, f64)>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// GloVe `(main, context)` bias of term `i`, if the table has biases.
    pub fn bias(&self, i: usize) -> Option<(f64, f64)> {
        self.biases.get(i).copied()
    }

    pub fn trainer(&self) -> Trainer {
        self.trainer
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn input_vector(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output_vector(&self, i: usize) -> &[f64] {
        &self.output[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, term: &str) -> Option<&[f64]> {
        self.index_of(term).map(|i| self.input_vector(i))
    }

    pub fn reindex(&mut self) {
        self.index = index_of_terms(&self.vocab);
    }

    /// Mean of input vectors over in-vocabulary tokens; zero if there are
    /// none.
    pub fn embed_text(&self, text: &str) -> DocVector {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in words(text) {
            if let Some(i) = self.index_of(w) {
                for (a, v) in acc.iter_mut().zip(self.input_vector(i)) {
                    *a += v;
                }
                n += 1;
            }
        }
        if n > 0 {
            let inv = 1.0 / n as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        DocVector::new(acc, Producer::Embedding)
    }

    /// `term<TAB>v1 v2 ... vD`, one line per term, input vectors only.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, term) in self.vocab.iter().enumerate() {
            out.push_str(term);
            out.push('\t');
            for (k, v) in self.input_vector(i).iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parse the text format. Output vectors are not stored in it and come
    /// back as zeros.
    pub fn from_text(text: &str, trainer: Trainer) -> Result<Self> {
        let mut vocab = Vec::new();
        let mut input = Vec::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let (term, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("line {}: missing tab", n + 1)))?;
            let values: Vec<f64> = rest
                .split(' ')
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1))))
                .collect::<Result<_>>()?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: values.len(),
                    })
                }
                _ => {}
            }
            vocab.push(term.to_string());
            input.extend(values);
        }
        let dim = dim.ok_or_else(|| Error::Empty("embedding file has no rows".into()))?;
        let output = vec![0.0; input.len()];
        Ok(EmbeddingTable {
            index: index_of_terms(&vocab),
            vocab,
            dim,
            input,
            output,
            trainer,
            biases: Vec::new(),
            epoch_losses: Vec::new(),
        })
    }
}

fn index_of_terms(vocab: &[String]) -> HashMap<String, usize> {
    vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect()
}

/// Corpus as integer sequences plus the vocabulary in first-appearance order.
struct Encoded {
    vocab: Vec<String>,
    counts: Vec<u64>,
    docs: Vec<Vec<u32>>,
}

fn encode_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Encoded {
    let mut index: HashMap<&'a str, u32> = HashMap::new();
    let mut vocab = Vec::new();
    let mut counts = Vec::new();
    let mut docs = Vec::new();
    for t in texts {
        let mut doc = Vec::new();
        for w in words(t) {
            let id = *index.entry(w).or_insert_with(|| {
                vocab.push(w.to_string());
                counts.push(0);
                (vocab.len() - 1) as u32
            });
            counts[id as usize] += 1;
            doc.push(id);
        }
        docs.push(doc);
    }
    Encoded { vocab, counts, docs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Word2VecParams {
    pub dim: usize,
    pub window: usize,
    pub neg_k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for Word2VecParams {
    fn default() -> Self {
        Word2VecParams {
            dim: 64,
            window: 5,
            neg_k: 5,
            epochs: 5,
            lr: 0.025,
            seed: 1,
        }
    }
}

impl Word2VecParams {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be positive".into()));
        }
        if self.neg_k == 0 {
            return Err(Error::InvalidParameter("neg_k must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter("lr must be positive".into()));
        }
        Ok(())
    }
}

/// `-ln σ(s)`, computed stably.
fn neg_log_sigmoid(s: f64) -> f64 {
    if s > 0.0 {
        (-s).exp().ln_1p()
    } else {
        -s + s.exp().ln_1p()
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One negative-sampling example: hidden vector `h` scores output rows
/// `rows[0]` (positive) and `rows[1..]` (negatives).
///
/// Updates each output row in place by `-lr * dL/du`, adds `-dL/dh` into
/// `neg_grad_h` (computed with pre-update output rows) and returns the loss
/// `-ln σ(u₀·h) - Σ ln σ(-u_k·h)`.
fn ns_update(h: &[f64], out: &mut [f64], dim: usize, rows: &[u32], lr: f64, neg_grad_h: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        let u = &mut out[r as usize * dim..(r as usize + 1) * dim];
        let s = dot(u, h);
        let label = if k == 0 { 1.0 } else { 0.0 };
        loss += if k == 0 { neg_log_sigmoid(s) } else { neg_log_sigmoid(-s) };
        let g = label - sigmoid(s);
        for ((a, ui), hi) in neg_grad_h.iter_mut().zip(u.iter_mut()).zip(h) {
            *a += g * *ui;
            *ui += lr * g * hi;
        }
    }
    loss
}

/// Skip-gram loss for one (target, context) pair.
pub fn skipgram_loss(target_in: &[f64], context_out: &[f64], negatives_out: &[&[f64]]) -> f64 {
    neg_log_sigmoid(dot(context_out, target_in))
        + negatives_out
            .iter()
            .map(|u| neg_log_sigmoid(-dot(u, target_in)))
            .sum::<f64>()
}

/// CBOW loss: the mean of the context input vectors predicts the target.
pub fn cbow_loss(context_in: &[&[f64]], target_out: &[f64], negatives_out: &[&[f64]]) -> f64 {
    let h = mean_of(context_in);
    skipgram_loss(&h, target_out, negatives_out)
}

fn mean_of(vs: &[&[f64]]) -> Vec<f64> {
    let dim = vs[0].len();
    let mut h = vec![0.0; dim];
    for v in vs {
        for (a, x) in h.iter_mut().zip(*v) {
            *a += x;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    h.iter_mut().for_each(|a| *a *= inv);
    h
}

/// Gradients of a negative-sampling loss.
#[derive(Debug, Clone)]
pub struct NsGrad {
    pub loss: f64,
    /// Gradient for each input vector feeding the hidden state (one for
    /// skip-gram, one per context word for CBOW).
    pub inputs: Vec<Vec<f64>>,
    /// Gradient for the positive output vector followed by each negative.
    pub outputs: Vec<Vec<f64>>,
}

/// Analytic gradients, computed by running the training kernel on a copy
/// with unit learning rate.
fn ns_grad(inputs: &[&[f64]], positive: &[f64], negatives: &[&[f64]]) -> NsGrad {
    let dim = positive.len();
    let h = mean_of(inputs);
    let mut out: Vec<f64> = positive.to_vec();
    for n in negatives {
        out.extend_from_slice(n);
    }
    let before = out.clone();
    let rows: Vec<u32> = (0..=negatives.len() as u32).collect();
    let mut neg_grad_h = vec![0.0; dim];
    let loss = ns_update(&h, &mut out, dim, &rows, 1.0, &mut neg_grad_h);
    let outputs = before
        .chunks(dim)
        .zip(out.chunks(dim))
        .map(|(b, a)| b.iter().zip(a).map(|(b, a)| b - a).collect())
        .collect();
    let per_input: Vec<f64> = neg_grad_h.iter().map(|g| -g / inputs.len() as f64).collect();
    NsGrad {
        loss,
        inputs: vec![per_input; inputs.len()],
        outputs,
    }
}

pub fn skipgram_grad(target_in: &[f64], context_out: &[f64], negatives_out: &[&[f64]]) -> NsGrad {
    ns_grad(&[target_in], context_out, negatives_out)
}

pub fn cbow_grad(context_in: &[&[f64]], target_out: &[f64], negatives_out: &[&[f64]]) -> NsGrad {
    ns_grad(context_in, target_out, negatives_out)
}

struct NoiseTable {
    dist: WeightedIndex<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        NoiseTable {
            dist: WeightedIndex::new(weights).expect("non-empty vocabulary"),
        }
    }

    /// Draw `k` negatives distinct from `avoid` (unless the vocabulary has a
    /// single word).
    fn draw(&self, rng: &mut seed::Rng, avoid: u32, k: usize, vocab_len: usize, buf: &mut Vec<u32>) {
        for _ in 0..k {
            let mut n = self.dist.sample(rng) as u32;
            let mut tries = 0;
            while n == avoid && vocab_len > 1 && tries < 16 {
                n = self.dist.sample(rng) as u32;
                tries += 1;
            }
            buf.push(n);
        }
    }
}

fn init_word2vec(enc: &Encoded, dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed::rng_for(seed, &[seed::tag("init")]);
    let v = enc.vocab.len();
    let scale = 0.5 / dim as f64;
    let input = (0..v * dim).map(|_| rng.random_range(-scale..scale)).collect();
    (input, vec![0.0; v * dim])
}

#[derive(Clone, Copy)]
enum W2vMode {
    Skipgram,
    Cbow,
}

fn train_word2vec<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    params: &Word2VecParams,
    mode: W2vMode,
) -> Result<EmbeddingTable> {
    params.validate()?;
    let enc = encode_corpus(texts);
    if enc.vocab.is_empty() {
        return Err(Error::Empty("corpus has no tokens".into()));
    }
    let dim = params.dim;
    let (mut input, mut output) = init_word2vec(&enc, dim, params.seed);
    let noise = NoiseTable::new(&enc.counts);
    let mut rng = seed::rng_for(params.seed, &[seed::tag("train")]);
    let total_tokens: usize = enc.docs.iter().map(Vec::len).sum();
    let total_steps = (total_tokens * params.epochs).max(1) as f64;
    let mut step = 0usize;

    let mut rows = Vec::with_capacity(params.neg_k + 1);
    let mut h = vec![0.0; dim];
    let mut neg_grad_h = vec![0.0; dim];
    let mut ctx: Vec<u32> = Vec::with_capacity(2 * params.window);
    let mut epoch_losses = Vec::with_capacity(params.epochs);

    for _ in 0..params.epochs {
        let (mut loss_sum, mut n_examples) = (0.0, 0usize);
        for doc in &enc.docs {
            for t in 0..doc.len() {
                let lr = params.lr * (1.0 - step as f64 / total_steps).max(1e-4);
                step += 1;
                let lo = t.saturating_sub(params.window);
                let hi = (t + params.window + 1).min(doc.len());
                ctx.clear();
                ctx.extend((lo..hi).filter(|&j| j != t).map(|j| doc[j]));
                if ctx.is_empty() {
                    continue;
                }
                match mode {
                    W2vMode::Skipgram => {
                        let target = doc[t] as usize;
                        for &c in &ctx {
                            rows.clear();
                            rows.push(c);
                            noise.draw(&mut rng, c, params.neg_k, enc.vocab.len(), &mut rows);
                            h.copy_from_slice(&input[target * dim..(target + 1) * dim]);
                            neg_grad_h.iter_mut().for_each(|g| *g = 0.0);
                            loss_sum += ns_update(&h, &mut output, dim, &rows, lr, &mut neg_grad_h);
                            n_examples += 1;
                            for (x, g) in input[target * dim..(target + 1) * dim].iter_mut().zip(&neg_grad_h) {
                                *x += lr * g;
                            }
                        }
                    }
                    W2vMode::Cbow => {
                        h.iter_mut().for_each(|x| *x = 0.0);
                        for &c in &ctx {
                            for (a, x) in h.iter_mut().zip(&input[c as usize * dim..(c as usize + 1) * dim]) {
                                *a += x;
                            }
                        }
                        let inv = 1.0 / ctx.len() as f64;
                        h.iter_mut().for_each(|x| *x *= inv);
                        rows.clear();
                        rows.push(doc[t]);
                        noise.draw(&mut rng, doc[t], params.neg_k, enc.vocab.len(), &mut rows);
                        neg_grad_h.iter_mut().for_each(|g| *g = 0.0);
                        loss_sum += ns_update(&h, &mut output, dim, &rows, lr, &mut neg_grad_h);
                        n_examples += 1;
                        for &c in &ctx {
                            for (x, g) in input[c as usize * dim..(c as usize + 1) * dim]
                                .iter_mut()
                                .zip(&neg_grad_h)
                            {
                                *x += lr * g * inv;
                            }
                        }
                    }
                }
            }
        }
        epoch_losses.push(if n_examples > 0 { loss_sum / n_examples as f64 } else { 0.0 });
    }

    Ok(EmbeddingTable {
        index: index_of_terms(&enc.vocab),
        vocab: enc.vocab,
        dim,
        input,
        output,
        trainer: match mode {
            W2vMode::Skipgram => Trainer::Skipgram,
            W2vMode::Cbow => Trainer::Cbow,
        },
        biases: Vec::new(),
        epoch_losses,
    })
}

/// Skip-gram with negative sampling: each word predicts every word within
/// `window` positions of it.
pub fn train_skipgram<'a>(texts: impl IntoIterator<Item = &'a str>, params: &Word2VecParams) -> Result<EmbeddingTable> {
    train_word2vec(texts, params, W2vMode::Skipgram)
}

/// CBOW with negative sampling: the mean of the window's input vectors
/// predicts the centre word.
pub fn train_cbow<'a>(texts: impl IntoIterator<Item = &'a str>, params: &Word2VecParams) -> Result<EmbeddingTable> {
    train_word2vec(texts, params, W2vMode::Cbow)
}

/// Symmetric, distance-weighted co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    vocab: Vec<String>,
    /// `(i, j, weight)`, sorted by `(i, j)`.
    entries: Vec<(u32, u32, f64)>,
    window: usize,
}

impl CooccurrenceMatrix {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        let find = |t: &str| self.vocab.iter().position(|v| v == t).map(|i| i as u32);
        let (Some(i), Some(j)) = (find(a), find(b)) else {
            return 0.0;
        };
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(i, j)))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }
}

/// Count co-occurrences within `window` positions, weighting a pair at
/// distance `d` by `1/d` and adding it in both directions.
pub fn build_cooccurrence<'a>(texts: impl IntoIterator<Item = &'a str>, window: usize) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(Error::InvalidParameter("window must be >= 1".into()));
    }
    let enc = encode_corpus(texts);
    let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
    for doc in &enc.docs {
        for i in 0..doc.len() {
            for d in 1..=window {
                let Some(&wj) = doc.get(i + d) else { break };
                let wi = doc[i];
                let x = 1.0 / d as f64;
                *counts.entry((wi, wj)).or_default() += x;
                *counts.entry((wj, wi)).or_default() += x;
            }
        }
    }
    let mut entries: Vec<(u32, u32, f64)> = counts.into_iter().map(|((i, j), x)| (i, j, x)).collect();
    entries.sort_unstable_by_key(|e| (e.0, e.1));
    Ok(CooccurrenceMatrix {
        vocab: enc.vocab,
        entries,
        window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GloveParams {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub x_max: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GloveParams {
    fn default() -> Self {
        GloveParams {
            dim: 64,
            epochs: 25,
            lr: 0.05,
            x_max: 100.0,
            alpha: 0.75,
            seed: 1,
        }
    }
}

/// GloVe weighting `(x / x_max)^alpha`, capped at 1.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x >= x_max {
        1.0
    } else {
        (x / x_max).powf(alpha)
    }
}

/// Loss of one co-occurrence entry: `f(x) (w·w̃ + b + b̃ - ln x)²`.
pub fn glove_entry_loss(w: &[f64], w_ctx: &[f64], b: f64, b_ctx: f64, x: f64, x_max: f64, alpha: f64) -> f64 {
    let diff = dot(w, w_ctx) + b + b_ctx - x.ln();
    glove_weight(x, x_max, alpha) * diff * diff
}

/// Gradients of [`glove_entry_loss`] with respect to `(w, w̃, b, b̃)`.
pub fn glove_entry_grad(
    w: &[f64],
    w_ctx: &[f64],
    b: f64,
    b_ctx: f64,
    x: f64,
    x_max: f64,
    alpha: f64,
) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let diff = dot(w, w_ctx) + b + b_ctx - x.ln();
    let g = 2.0 * glove_weight(x, x_max, alpha) * diff;
    (
        w_ctx.iter().map(|v| g * v).collect(),
        w.iter().map(|v| g * v).collect(),
        g,
        g,
    )
}

/// Fit GloVe vectors with AdaGrad. Main vectors become the table's input
/// vectors, context vectors its output vectors. Entries with `x <= 0` are
/// skipped.
pub fn train_glove(cooc: &CooccurrenceMatrix, params: &GloveParams) -> Result<EmbeddingTable> {
    if cooc.entries.is_empty() {
        return Err(Error::Empty("co-occurrence matrix has no entries".into()));
    }
    if params.dim == 0 {
        return Err(Error::InvalidParameter("dim must be positive".into()));
    }
    let dim = params.dim;
    let v = cooc.vocab.len();
    let mut rng = seed::rng_for(params.seed, &[seed::tag("glove-init")]);
    let scale = 0.5 / dim as f64;
    let mut w: Vec<f64> = (0..v * dim).map(|_| rng.random_range(-scale..scale)).collect();
    let mut wc: Vec<f64> = (0..v * dim).map(|_| rng.random_range(-scale..scale)).collect();
    let mut b = vec![0.0; v];
    let mut bc = vec![0.0; v];
    let mut gw = vec![1.0; v * dim];
    let mut gwc = vec![1.0; v * dim];
    let mut gb = vec![1.0; v];
    let mut gbc = vec![1.0; v];

    let mut order: Vec<usize> = (0..cooc.entries.len())
        .filter(|&k| cooc.entries[k].2 > 0.0)
        .collect();
    if order.is_empty() {
        return Err(Error::Empty("co-occurrence matrix has no positive entries".into()));
    }
    let mut shuffle_rng = seed::rng_for(params.seed, &[seed::tag("glove-order")]);
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss = 0.0;
        for &k in &order {
            let (i, j, x) = cooc.entries[k];
            let (i, j) = (i as usize, j as usize);
            let (wi, wj) = (i * dim..(i + 1) * dim, j * dim..(j + 1) * dim);
            let diff = dot(&w[wi.clone()], &wc[wj.clone()]) + b[i] + bc[j] - x.ln();
            let f = glove_weight(x, params.x_max, params.alpha);
            loss += f * diff * diff;
            let g = 2.0 * f * diff;
            for d in 0..dim {
                let (a, c) = (wi.start + d, wj.start + d);
                let g_w = g * wc[c];
                let g_c = g * w[a];
                gw[a] += g_w * g_w;
                gwc[c] += g_c * g_c;
                w[a] -= params.lr * g_w / gw[a].sqrt();
                wc[c] -= params.lr * g_c / gwc[c].sqrt();
            }
            gb[i] += g * g;
            gbc[j] += g * g;
            b[i] -= params.lr * g / gb[i].sqrt();
            bc[j] -= params.lr * g / gbc[j].sqrt();
        }
        epoch_losses.push(loss / order.len() as f64);
    }
    Ok(EmbeddingTable {
        index: index_of_terms(&cooc.vocab),
        vocab: cooc.vocab.clone(),
        dim,
        input: w,
        output: wc,
        trainer: Trainer::Glove,
        biases: b.into_iter().zip(bc).collect(),
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_init_losses() {
        let z = vec![0.0; 8];
        let l = skipgram_loss(&z, &z, &[&z]);
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
        for k in 1..5 {
            let negs: Vec<&[f64]> = vec![&z[..]; k];
            let l = cbow_loss(&[&z, &z], &z, &negs);
            assert!((l - (1 + k) as f64 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_context_cbow_equals_swapped_skipgram() {
        let a = [0.3, -0.1, 0.7];
        let b = [-0.2, 0.5, 0.1];
        let n = [0.9, 0.4, -0.3];
        let cb = cbow_loss(&[&a], &b, &[&n]);
        let sg = skipgram_loss(&a, &b, &[&n]);
        assert_eq!(cb, sg);
    }

    #[test]
    fn cooccurrence_counts() {
        let m = build_cooccurrence(["a b"], 1).unwrap();
        assert_eq!(m.get("a", "b"), 1.0);
        assert_eq!(m.get("b", "a"), 1.0);
        let m = build_cooccurrence(["a b c"], 2).unwrap();
        assert_eq!(m.get("a", "c"), 0.5);
        assert_eq!(m.get("c", "a"), 0.5);
        assert_eq!(m.get("a", "b"), 1.0);
        assert!(build_cooccurrence(["a"], 0).is_err());
    }

    #[test]
    fn cooccurrence_total_is_order_free() {
        let docs = ["x y z x", "y y q", "z q x y"];
        let fwd = build_cooccurrence(docs, 3).unwrap().total_weight();
        let rev: Vec<&str> = docs.iter().rev().copied().collect();
        let back = build_cooccurrence(rev, 3).unwrap().total_weight();
        assert!((fwd - back).abs() < 1e-12);
    }

    #[test]
    fn glove_weights() {
        assert_eq!(glove_weight(100.0, 100.0, 0.75), 1.0);
        assert_eq!(glove_weight(500.0, 100.0, 0.75), 1.0);
        assert!((glove_weight(50.0, 100.0, 0.75) - 0.5946).abs() < 1e-4);
    }

    #[test]
    fn parameter_validation() {
        let bad = Word2VecParams { dim: 0, ..Default::default() };
        assert!(train_skipgram(["a b"], &bad).is_err());
        let bad = Word2VecParams { window: 0, ..Default::default() };
        assert!(train_cbow(["a b"], &bad).is_err());
        let bad = Word2VecParams { neg_k: 0, ..Default::default() };
        assert!(train_skipgram(["a b"], &bad).is_err());
        assert!(train_skipgram(Vec::<&str>::new(), &Word2VecParams::default()).is_err());
    }

    #[test]
    fn embed_document_pools() {
        let t = EmbeddingTable::from_text("a\t1 2\nb\t3 4\n", Trainer::Skipgram).unwrap();
        assert_eq!(t.embed_text("a").values, vec![1.0, 2.0]);
        assert_eq!(t.embed_text("zzz").values, vec![0.0, 0.0]);
        let pooled = t.embed_text("a b b unknown").values;
        assert!((pooled[0] - 7.0 / 3.0).abs() < 1e-12 && (pooled[1] - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn text_format_round_trip() {
        let t = train_skipgram(["a b c a b", "c b a"], &Word2VecParams { dim: 4, epochs: 2, ..Default::default() }).unwrap();
        let back = EmbeddingTable::from_text(&t.to_text(), Trainer::Skipgram).unwrap();
        assert_eq!(back.vocab(), t.vocab());
        for i in 0..t.vocab().len() {
            assert_eq!(back.input_vector(i), t.input_vector(i));
        }
        assert!(EmbeddingTable::from_text("a\t1 2\nb\t3\n", Trainer::Glove).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let p = Word2VecParams { dim: 8, epochs: 2, ..Default::default() };
        let docs = ["the cat sat", "the dog sat", "a cat ran"];
        assert_eq!(train_skipgram(docs, &p).unwrap(), train_skipgram(docs, &p).unwrap());
        assert_eq!(train_cbow(docs, &p).unwrap(), train_cbow(docs, &p).unwrap());
        let c = build_cooccurrence(docs, 2).unwrap();
        let g = GloveParams { dim: 8, epochs: 3, ..Default::default() };
        assert_eq!(train_glove(&c, &g).unwrap(), train_glove(&c, &g).unwrap());
    }
}
