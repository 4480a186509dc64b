//! Topic models: LDA by collapsed Gibbs sampling and LSI by randomized
//! truncated SVD of the TF-IDF term-document matrix.

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{tfidf_fit, DocVector, Producer, TfidfModel};
use crate::linalg::{orthonormalize, symmetric_eigen, Mat};
use crate::seed;
use crate::tokenizer::words;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaParams {
    pub k: usize,
    /// Document-topic prior. Defaults to `50 / k`.
    pub alpha: f64,
    /// Topic-word prior.
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
}

impl LdaParams {
    pub fn with_topics(k: usize) -> Self {
        LdaParams {
            k,
            alpha: 50.0 / k.max(1) as f64,
            ..LdaParams::default()
        }
    }
}

impl Default for LdaParams {
    fn default() -> Self {
        LdaParams {
            k: 20,
            alpha: 2.5,
            beta: 0.01,
            iters: 200,
            seed: 1,
        }
    }
}

/// Fitted topic-word statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    k: usize,
    alpha: f64,
    beta: f64,
    vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// `k × V`, row-major.
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
}

impl LdaModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn topic_word(&self, topic: usize, word: usize) -> u32 {
        self.topic_word[topic * self.vocab.len() + word]
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    pub fn word_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn reindex(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Topic-word distribution `φ_k(w) = (n_kw + β) / (n_k + Vβ)`.
    pub fn phi(&self, topic: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let denom = self.topic_totals[topic] as f64 + v as f64 * self.beta;
        (0..v)
            .map(|w| (self.topic_word(topic, w) as f64 + self.beta) / denom)
            .collect()
    }
}

/// Collapsed Gibbs sampler state. Exposed so single-site conditionals can be
/// inspected directly.
#[derive(Debug, Clone)]
pub struct LdaSampler {
    k: usize,
    alpha: f64,
    beta: f64,
    vocab_len: usize,
    docs: Vec<Vec<u32>>,
    z: Vec<Vec<u32>>,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
    rng: seed::Rng,
}

impl LdaSampler {
    /// Start from explicit topic assignments.
    pub fn with_assignments(
        docs: Vec<Vec<u32>>,
        z: Vec<Vec<u32>>,
        vocab_len: usize,
        params: &LdaParams,
    ) -> Result<Self> {
        validate_lda(params)?;
        if docs.len() != z.len() || docs.iter().zip(&z).any(|(d, zd)| d.len() != zd.len()) {
            return Err(Error::InvalidParameter("assignments must match documents".into()));
        }
        let k = params.k;
        let mut s = LdaSampler {
            k,
            alpha: params.alpha,
            beta: params.beta,
            vocab_len,
            doc_topic: vec![0; docs.len() * k],
            topic_word: vec![0; k * vocab_len],
            topic_totals: vec![0; k],
            docs,
            z,
            rng: seed::rng_for(params.seed, &[seed::tag("lda-sweep")]),
        };
        for d in 0..s.docs.len() {
            for i in 0..s.docs[d].len() {
                let (w, t) = (s.docs[d][i] as usize, s.z[d][i] as usize);
                if w >= vocab_len || t >= k {
                    return Err(Error::InvalidParameter(format!(
                        "token ({d},{i}) has word {w} / topic {t} out of range"
                    )));
                }
                s.doc_topic[d * k + t] += 1;
                s.topic_word[t * vocab_len + w] += 1;
                s.topic_totals[t] += 1;
            }
        }
        Ok(s)
    }

    /// Start from uniformly random topic assignments.
    pub fn random_init(docs: Vec<Vec<u32>>, vocab_len: usize, params: &LdaParams) -> Result<Self> {
        validate_lda(params)?;
        let mut rng = seed::rng_for(params.seed, &[seed::tag("lda-init")]);
        let z = docs
            .iter()
            .map(|d| d.iter().map(|_| rng.random_range(0..params.k as u32)).collect())
            .collect();
        Self::with_assignments(docs, z, vocab_len, params)
    }

    /// Normalized full conditional `p(z_{d,i} = t | z_{-(d,i)}, w)`.
    pub fn conditional(&self, d: usize, i: usize) -> Vec<f64> {
        let mut p = self.unnormalized_excluding(d, i);
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    fn unnormalized_excluding(&self, d: usize, i: usize) -> Vec<f64> {
        let (w, cur) = (self.docs[d][i] as usize, self.z[d][i] as usize);
        let vb = self.vocab_len as f64 * self.beta;
        (0..self.k)
            .map(|t| {
                let own = u32::from(t == cur);
                let ndt = f64::from(self.doc_topic[d * self.k + t] - own);
                let ntw = f64::from(self.topic_word[t * self.vocab_len + w] - own);
                let nt = (self.topic_totals[t] - u64::from(own)) as f64;
                (ndt + self.alpha) * (ntw + self.beta) / (nt + vb)
            })
            .collect()
    }

    /// One full sweep over every token.
    pub fn sweep(&mut self) {
        let k = self.k;
        let v = self.vocab_len;
        let vb = v as f64 * self.beta;
        let mut cum = vec![0.0; k];
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i] as usize;
                let old = self.z[d][i] as usize;
                self.doc_topic[d * k + old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_totals[old] -= 1;
                let mut acc = 0.0;
                for t in 0..k {
                    acc += (f64::from(self.doc_topic[d * k + t]) + self.alpha)
                        * (f64::from(self.topic_word[t * v + w]) + self.beta)
                        / (self.topic_totals[t] as f64 + vb);
                    cum[t] = acc;
                }
                let u = self.rng.random::<f64>() * acc;
                let new = cum.iter().position(|&c| u < c).unwrap_or(k - 1);
                self.z[d][i] = new as u32;
                self.doc_topic[d * k + new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_totals[new] += 1;
            }
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.topic_totals.iter().sum()
    }

    pub fn topic_word_total(&self) -> u64 {
        self.topic_word.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.z
    }

    /// Smoothed doc-topic proportions of a training document.
    pub fn doc_topics(&self, d: usize) -> Vec<f64> {
        let n = self.docs[d].len() as f64;
        let denom = n + self.k as f64 * self.alpha;
        (0..self.k)
            .map(|t| (f64::from(self.doc_topic[d * self.k + t]) + self.alpha) / denom)
            .collect()
    }
}

fn validate_lda(params: &LdaParams) -> Result<()> {
    if params.k == 0 {
        return Err(Error::InvalidParameter("LDA needs k >= 1".into()));
    }
    if params.iters == 0 {
        return Err(Error::InvalidParameter("LDA needs iters >= 1".into()));
    }
    if !(params.alpha > 0.0 && params.beta > 0.0) {
        return Err(Error::InvalidParameter("LDA priors must be positive".into()));
    }
    Ok(())
}

fn encode_docs<'a>(texts: impl IntoIterator<Item = &'a str>) -> (Vec<String>, Vec<Vec<u32>>) {
    let mut index: HashMap<&'a str, u32> = HashMap::new();
    let mut vocab = Vec::new();
    let docs = texts
        .into_iter()
        .map(|t| {
            words(t)
                .map(|w| {
                    *index.entry(w).or_insert_with(|| {
                        vocab.push(w.to_string());
                        (vocab.len() - 1) as u32
                    })
                })
                .collect()
        })
        .collect();
    (vocab, docs)
}

/// Fit LDA with `params.iters` collapsed Gibbs sweeps.
pub fn lda_fit<'a>(texts: impl IntoIterator<Item = &'a str>, params: &LdaParams) -> Result<LdaModel> {
    validate_lda(params)?;
    let (vocab, docs) = encode_docs(texts);
    if vocab.is_empty() {
        return Err(Error::Empty("LDA corpus has no tokens".into()));
    }
    let mut sampler = LdaSampler::random_init(docs, vocab.len(), params)?;
    for _ in 0..params.iters {
        sampler.sweep();
    }
    let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(LdaModel {
        k: params.k,
        alpha: params.alpha,
        beta: params.beta,
        vocab,
        index,
        topic_word: sampler.topic_word,
        topic_totals: sampler.topic_totals,
    })
}

/// Fold-in inference: Gibbs-sample the document's topic assignments with
/// topic-word counts held fixed and average the smoothed proportions over
/// the second half of the sweeps. Out-of-vocabulary tokens are ignored; a
/// document with none left gets the uniform distribution.
pub fn lda_infer(model: &LdaModel, text: &str, iters: usize, seed: u64) -> DocVector {
    let k = model.k;
    let doc: Vec<usize> = words(text).filter_map(|w| model.word_index(w)).collect();
    if doc.is_empty() || k == 1 {
        return DocVector::new(vec![1.0 / k as f64; k], Producer::Lda);
    }
    let iters = iters.max(1);
    let v = model.vocab.len();
    let vb = v as f64 * model.beta;
    // Fixed topic-word factors for the document's tokens.
    let phi: Vec<f64> = doc
        .iter()
        .flat_map(|&w| {
            (0..k).map(move |t| {
                (f64::from(model.topic_word(t, w)) + model.beta) / (model.topic_totals[t] as f64 + vb)
            })
        })
        .collect();
    let mut rng = seed::rng(seed);
    let mut z: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
    let mut ndt = vec![0u32; k];
    for &t in &z {
        ndt[t] += 1;
    }
    let mut cum = vec![0.0; k];
    let mut theta = vec![0.0; k];
    let burn = iters / 2;
    let denom = doc.len() as f64 + k as f64 * model.alpha;
    for it in 0..iters {
        for i in 0..doc.len() {
            ndt[z[i]] -= 1;
            let mut acc = 0.0;
            for t in 0..k {
                acc += (f64::from(ndt[t]) + model.alpha) * phi[i * k + t];
                cum[t] = acc;
            }
            let u = rng.random::<f64>() * acc;
            let t = cum.iter().position(|&c| u < c).unwrap_or(k - 1);
            z[i] = t;
            ndt[t] += 1;
        }
        if it >= burn {
            for t in 0..k {
                theta[t] += (f64::from(ndt[t]) + model.alpha) / denom;
            }
        }
    }
    let total: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|x| *x /= total);
    DocVector::new(theta, Producer::Lda)
}

/// A linear operator `A: R^cols -> R^rows` applied to blocks of vectors.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `A · X` for `X` of shape `cols × l`.
    fn apply(&self, x: &Mat) -> Mat;
    /// `Aᵀ · Y` for `Y` of shape `rows × l`.
    fn apply_t(&self, y: &Mat) -> Mat;
}

impl LinearOperator for Mat {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &Mat) -> Mat {
        self.matmul(x)
    }
    fn apply_t(&self, y: &Mat) -> Mat {
        self.t_matmul(y)
    }
}

/// Term-document matrix stored as sparse document columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumns {
    pub n_rows: usize,
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl LinearOperator for SparseColumns {
    fn rows(&self) -> usize {
        self.n_rows
    }
    fn cols(&self) -> usize {
        self.columns.len()
    }
    fn apply(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros(self.n_rows, x.cols);
        for (j, col) in self.columns.iter().enumerate() {
            let xr = x.row(j);
            for &(t, a) in col {
                for (o, v) in out.row_mut(t).iter_mut().zip(xr) {
                    *o += a * v;
                }
            }
        }
        out
    }
    fn apply_t(&self, y: &Mat) -> Mat {
        let mut out = Mat::zeros(self.columns.len(), y.cols);
        for (j, col) in self.columns.iter().enumerate() {
            let orow = out.row_mut(j);
            for &(t, a) in col {
                for (o, v) in orow.iter_mut().zip(y.row(t)) {
                    *o += a * v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvdParams {
    /// Power iterations always performed.
    pub power_iters: usize,
    /// Further iterations allowed while the top-k Ritz values still move.
    pub max_extra_iters: usize,
    /// Relative change in the Ritz values below which iteration stops.
    pub ritz_tol: f64,
    pub oversample: usize,
    pub seed: u64,
}

impl Default for SvdParams {
    fn default() -> Self {
        SvdParams {
            power_iters: 4,
            max_extra_iters: 200,
            ritz_tol: 1e-14,
            oversample: 8,
            seed: 0x5eed,
        }
    }
}

/// Rank-k factors `A ≈ U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// Randomized range finder with power iterations, followed by an exact
/// eigen-decomposition of the small projected Gram matrix.
///
/// After the fixed `power_iters`, iteration continues (up to
/// `max_extra_iters`) until the top-k Ritz values change by at most
/// `ritz_tol` relative to the largest.
pub fn randomized_svd<A: LinearOperator>(a: &A, k: usize, params: &SvdParams) -> Result<TruncatedSvd> {
    let (m, n) = (a.rows(), a.cols());
    if k == 0 || k > m.min(n) {
        return Err(Error::InvalidParameter(format!(
            "rank k={k} must lie in 1..={}",
            m.min(n)
        )));
    }
    let l = (k + params.oversample).min(m.min(n));
    let mut rng = seed::rng(params.seed);
    let omega = Mat::from_vec(n, l, (0..n * l).map(|_| rng.sample(StandardNormal)).collect());
    let mut q = orthonormalize(&a.apply(&omega));
    // Bᵀ = Aᵀ Q is n × l; B Bᵀ = (Aᵀ Q)ᵀ (Aᵀ Q).
    let mut bt = a.apply_t(&q);
    let mut prev: Option<Vec<f64>> = None;
    for it in 0..params.power_iters + params.max_extra_iters {
        if it >= params.power_iters {
            let (evals, _) = symmetric_eigen(&bt.t_matmul(&bt));
            let top: Vec<f64> = evals[..k].to_vec();
            let scale = top[0].abs().max(f64::MIN_POSITIVE);
            let settled = prev.as_ref().is_some_and(|p| {
                p.iter().zip(&top).all(|(x, y)| (x - y).abs() <= params.ritz_tol * scale)
            });
            if settled {
                break;
            }
            prev = Some(top);
        }
        let z = orthonormalize(&bt);
        q = orthonormalize(&a.apply(&z));
        bt = a.apply_t(&q);
    }
    let gram = bt.t_matmul(&bt);
    let (evals, evecs) = symmetric_eigen(&gram);
    let s: Vec<f64> = evals[..k].iter().map(|&e| e.max(0.0).sqrt()).collect();
    let mut w = Mat::zeros(l, k);
    for i in 0..l {
        for j in 0..k {
            w[(i, j)] = evecs[(i, j)];
        }
    }
    let u = q.matmul(&w);
    let mut v = bt.matmul(&w);
    let tol = s.first().copied().unwrap_or(0.0) * 1e-12;
    for j in 0..k {
        let inv = if s[j] > tol { 1.0 / s[j] } else { 0.0 };
        for i in 0..n {
            v[(i, j)] *= inv;
        }
    }
    Ok(TruncatedSvd { u, s, v })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsiModel {
    pub tfidf: TfidfModel,
    /// `T × k` left singular vectors.
    pub u: Mat,
    /// Descending singular values.
    pub sigma: Vec<f64>,
}

impl LsiModel {
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    /// `v = Σ⁻¹ Uᵀ x`; directions with (numerically) zero singular value map
    /// to 0.
    pub fn project(&self, doc_tfidf: &DocVector) -> Result<DocVector> {
        if doc_tfidf.dim() != self.u.rows {
            return Err(Error::DimensionMismatch {
                expected: self.u.rows,
                actual: doc_tfidf.dim(),
            });
        }
        let tol = self.sigma.first().copied().unwrap_or(0.0) * 1e-12;
        let mut out = vec![0.0; self.k()];
        for (t, &x) in doc_tfidf.values.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, u) in out.iter_mut().zip(self.u.row(t)) {
                *o += u * x;
            }
        }
        for (o, &s) in out.iter_mut().zip(&self.sigma) {
            *o = if s > tol { *o / s } else { 0.0 };
        }
        Ok(DocVector::new(out, Producer::Lsi))
    }

    pub fn transform_text(&self, text: &str) -> DocVector {
        self.project(&self.tfidf.transform_text(text))
            .expect("TF-IDF dimension matches by construction")
    }
}

/// Rank-k LSI of the TF-IDF term-document matrix. Requires
/// `1 <= k <= min(terms, documents)`.
pub fn lsi_fit<'a>(texts: impl IntoIterator<Item = &'a str> + Clone, k: usize, params: &SvdParams) -> Result<LsiModel> {
    let tfidf = tfidf_fit(texts.clone())?;
    let columns: Vec<Vec<(usize, f64)>> = texts.into_iter().map(|t| tfidf.transform_sparse(t)).collect();
    let a = SparseColumns {
        n_rows: tfidf.dim(),
        columns,
    };
    let svd = randomized_svd(&a, k, params)?;
    Ok(LsiModel {
        tfidf,
        u: svd.u,
        sigma: svd.s,
    })
}

/// Largest usable LSI rank for a corpus: `min(requested, terms, docs)`.
pub fn clamp_lsi_rank<'a>(texts: impl IntoIterator<Item = &'a str> + Clone, requested: usize) -> Result<usize> {
    let n_docs = texts.clone().into_iter().count();
    let tfidf = tfidf_fit(texts)?;
    Ok(requested.min(tfidf.dim()).min(n_docs).max(1))
}
