//! Building blocks for benchmarking threatening-text classifiers.
//!
//! The crate covers everything up to (but not including) the neural model:
//!
//! - [`corpus`]: CSV ingestion, scenario construction, stratified splits and
//!   minority upsampling.
//! - [`tokenizer`]: byte-level BPE used by the transformer, plus the plain
//!   whitespace tokenizer used by the bag-of-words pipelines.
//! - [`features`]: TF-IDF vectors.
//! - [`embeddings`]: skip-gram, CBOW and GloVe word vectors pooled into
//!   document vectors.
//! - [`topics`]: LDA (collapsed Gibbs) and LSI (randomized truncated SVD).
//! - [`classifiers`]: logistic regression, linear SVM, random forest and the
//!   soft-voting ensemble.
//! - [`metrics`]: confusion counts, F-beta, accuracy and ROC AUC.
//!
//! Every randomized routine takes an explicit seed and is a pure function of
//! its inputs.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod linalg;
pub mod metrics;
pub mod seed;
pub mod tokenizer;
pub mod topics;

pub use error::{Error, Result};
pub use features::DocVector;
