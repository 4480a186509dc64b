//! Miniature transformer classifier with low-rank adapters, trained from
//! scratch on CPU.
//!
//! [`model::init_base`] builds a frozen base, [`train::finetune`] attaches
//! adapters and trains them with the classifier head, and
//! [`model::lora_merge`] folds the adapters back into the base matrices.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rope;
pub mod tensor;
pub mod train;

pub use config::TransformerConfig;
pub use error::{NeuralError, Result};
