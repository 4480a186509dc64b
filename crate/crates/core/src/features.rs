//! TF-IDF document vectors.
//!
//! Raw term counts, smoothed IDF `ln((1 + N) / (1 + df)) + 1`, then L2
//! normalization. Terms come from [`crate::tokenizer::words`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::tokenizer::words;

/// Which pipeline produced a [`DocVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Tfidf,
    Embedding,
    Lda,
    Lsi,
}

/// Dense feature vector for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVector {
    pub values: Vec<f64>,
    pub producer: Producer,
}

impl DocVector {
    pub fn new(values: Vec<f64>, producer: Producer) -> Self {
        DocVector { values, producer }
    }

    pub fn zeros(dim: usize, producer: Producer) -> Self {
        DocVector::new(vec![0.0; dim], producer)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Terms in column order.
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    n_docs_fit: usize,
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn n_docs_fit(&self) -> usize {
        self.n_docs_fit
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Restore the term index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Sparse `(column, weight)` pairs, sorted by column, L2-normalized.
    pub fn transform_sparse(&self, text: &str) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for w in words(text) {
            if let Some(&c) = self.index.get(w) {
                *counts.entry(c).or_default() += 1.0;
            }
        }
        let mut out: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(c, n)| (c, n * self.idf[c]))
            .collect();
        let norm = out.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut out {
                *v /= norm;
            }
        }
        out
    }

    pub fn transform_text(&self, text: &str) -> DocVector {
        let mut v = DocVector::zeros(self.dim(), Producer::Tfidf);
        for (c, x) in self.transform_sparse(text) {
            v.values[c] = x;
        }
        v
    }

    pub fn transform(&self, doc: &Document) -> DocVector {
        self.transform_text(&doc.text)
    }
}

/// Fit vocabulary and IDF weights. Columns are ordered by first appearance.
pub fn tfidf_fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<TfidfModel> {
    let mut terms: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut df: Vec<usize> = Vec::new();
    let mut n_docs = 0usize;
    let mut seen: Vec<usize> = Vec::new();
    for text in texts {
        n_docs += 1;
        for w in words(text) {
            let c = match index.get(w) {
                Some(&c) => c,
                None => {
                    let c = terms.len();
                    terms.push(w.to_string());
                    index.insert(w.to_string(), c);
                    df.push(0);
                    seen.push(0);
                    c
                }
            };
            if seen[c] != n_docs {
                seen[c] = n_docs;
                df[c] += 1;
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::Empty("TF-IDF needs at least one token".into()));
    }
    let n = n_docs as f64;
    let idf = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel {
        terms,
        index,
        idf,
        n_docs_fit: n_docs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    #[test]
    fn idf_values() {
        let m = tfidf_fit(["a b", "a c"]).unwrap();
        assert_eq!(m.idf()[m.column("a").unwrap()], 1.0);

        let m = tfidf_fit(["x y", "y", "y z"]).unwrap();
        let idf_x = m.idf()[m.column("x").unwrap()];
        assert!((idf_x - ((4.0f64 / 2.0).ln() + 1.0)).abs() < 1e-15);
        assert!((idf_x - 1.6931).abs() < 1e-4);
        assert_eq!(m.dim(), 3);
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(tfidf_fit(Vec::<&str>::new()).is_err());
        assert!(tfidf_fit(["   ", ""]).is_err());
    }

    #[test]
    fn oov_and_single_term() {
        let m = tfidf_fit(["alpha beta", "beta gamma"]).unwrap();
        let z = m.transform(&Document::new("unseen words only", Label::NonThreat, "x"));
        assert!(z.values.iter().all(|&v| v == 0.0));
        let one = m.transform_text("gamma gamma gamma unseen");
        assert_eq!(one.values.iter().filter(|&&v| v != 0.0).count(), 1);
        assert!((one.values[m.column("gamma").unwrap()] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicating_tokens_is_invariant() {
        let m = tfidf_fit(["a b c", "a d", "c c e"]).unwrap();
        let once = m.transform_text("a c e");
        let thrice = m.transform_text("a c e a c e a c e");
        for (x, y) in once.values.iter().zip(&thrice.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn serde_round_trip_restores_index() {
        let m = tfidf_fit(["a b", "b c"]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let mut back: TfidfModel = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back, m);
    }
}
