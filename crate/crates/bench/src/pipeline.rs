//! Fitting one method on a training split and scoring a test split.
//!
//! Classical methods turn each text into a [`DocVector`] and feed the
//! soft-voting ensemble. The transformer methods train a BPE vocabulary,
//! fine-tune the mini model and predict with the merged weights.

use serde::{Deserialize, Serialize};
use threatbench_core::classifiers::{Ensemble, ProbVector};
use threatbench_core::corpus::LabeledDataset;
use threatbench_core::embeddings::{build_cooccurrence, train_cbow, train_glove, train_skipgram, EmbeddingTable, Word2VecParams};
use threatbench_core::features::{tfidf_fit, DocVector, TfidfModel};
use threatbench_core::seed;
use threatbench_core::tokenizer::{train_bpe, BpeVocab};
use threatbench_core::topics::{clamp_lsi_rank, lda_fit, lda_infer, lsi_fit, LdaModel, LdaParams, LsiModel};
use threatbench_neural::checkpoint::Checkpoint;
use threatbench_neural::model::init_base;
use threatbench_neural::train::{finetune, predict_proba, TrainConfig};
use threatbench_neural::TransformerConfig;

use crate::config::{Hyper, Method};
use crate::error::{BenchError, Result};

/// Text-to-vector stage of a classical pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureModel {
    Tfidf(TfidfModel),
    Embedding(EmbeddingTable),
    Lda { model: LdaModel, infer_iters: usize, seed: u64 },
    Lsi(LsiModel),
}

impl FeatureModel {
    pub fn transform(&self, text: &str) -> DocVector {
        match self {
            FeatureModel::Tfidf(m) => m.transform_text(text),
            FeatureModel::Embedding(t) => t.embed_text(text),
            FeatureModel::Lda { model, infer_iters, seed } => lda_infer(model, text, *infer_iters, *seed),
            FeatureModel::Lsi(m) => m.transform_text(text),
        }
    }

    /// Rebuild lookup tables that are not serialized.
    fn reindex(&mut self) {
        match self {
            FeatureModel::Tfidf(m) => m.reindex(),
            FeatureModel::Embedding(t) => t.reindex(),
            FeatureModel::Lda { model, .. } => model.reindex(),
            FeatureModel::Lsi(m) => m.tfidf.reindex(),
        }
    }
}

/// A fitted model, ready to score new texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Classical { features: FeatureModel, ensemble: Ensemble },
    Transformer {
        /// [`BpeVocab::to_text`] form.
        bpe: String,
        /// Adapters stay separate here; prediction merges them first.
        checkpoint: Checkpoint,
    },
}

impl FittedModel {
    pub fn reindex(&mut self) {
        if let FittedModel::Classical { features, .. } = self {
            features.reindex();
        }
    }

    pub fn predict<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<ProbVector>> {
        match self {
            FittedModel::Classical { features, ensemble } => texts
                .into_iter()
                .map(|t| Ok(ensemble.predict_proba(&features.transform(t))?))
                .collect(),
            FittedModel::Transformer { bpe, checkpoint } => {
                let vocab = BpeVocab::from_text(bpe)?;
                let merged = threatbench_neural::model::lora_merge(&checkpoint.base, &checkpoint.adapters)?;
                let max_len = merged.config.max_len;
                texts
                    .into_iter()
                    .map(|t| {
                        let p = predict_proba(&merged, &[], &vocab.encode(t, max_len)?)?;
                        Ok(ProbVector::new(p[0], p[1])?)
                    })
                    .collect()
            }
        }
    }
}

fn fit_features(method: Method, train: &LabeledDataset, hyper: &Hyper, seed: u64) -> Result<FeatureModel> {
    let docs: Vec<&str> = train.texts().collect();
    let texts = || docs.iter().copied();
    Ok(match method {
        Method::Tfidf => FeatureModel::Tfidf(tfidf_fit(texts())?),
        Method::Glove => {
            let cooc = build_cooccurrence(texts(), hyper.glove.window)?;
            FeatureModel::Embedding(train_glove(&cooc, &hyper.glove.params(seed))?)
        }
        Method::Cbow | Method::Skipgram => {
            let params = Word2VecParams { seed, ..hyper.word2vec.clone() };
            let table = if method == Method::Cbow {
                train_cbow(texts(), &params)?
            } else {
                train_skipgram(texts(), &params)?
            };
            FeatureModel::Embedding(table)
        }
        Method::Lda => {
            let h = &hyper.lda;
            let params = LdaParams {
                k: h.k,
                alpha: h.alpha.unwrap_or(50.0 / h.k.max(1) as f64),
                beta: h.beta,
                iters: h.iters,
                seed,
            };
            FeatureModel::Lda {
                model: lda_fit(texts(), &params)?,
                infer_iters: h.infer_iters,
                seed: seed::derive(seed, &[seed::tag("lda-infer")]),
            }
        }
        Method::Lsi => {
            let k = clamp_lsi_rank(texts(), hyper.lsi.k)?;
            let svd = threatbench_core::topics::SvdParams { seed, ..hyper.lsi.svd.clone() };
            FeatureModel::Lsi(lsi_fit(texts(), k, &svd)?)
        }
        Method::TransformerLora | Method::TransformerFull => {
            return Err(BenchError::Config(format!("{method} has no feature stage")))
        }
    })
}

fn fit_transformer(method: Method, train: &LabeledDataset, hyper: &Hyper, seed: u64) -> Result<FittedModel> {
    let h = &hyper.transformer;
    let vocab = train_bpe(train.texts(), h.bpe_vocab)?;
    let config = TransformerConfig {
        vocab_size: vocab.len(),
        n_classes: 2,
        ..h.model.clone()
    };
    let sequences = train
        .texts()
        .map(|t| vocab.encode(t, config.max_len))
        .collect::<threatbench_core::Result<Vec<_>>>()?;
    let labels: Vec<usize> = train.labels().iter().map(|l| l.index()).collect();
    let mut base = init_base(&config, seed::derive(seed, &[seed::tag("transformer-init")]))?;
    let mut train_cfg = TrainConfig { seed, ..h.train.clone() };
    if method == Method::TransformerFull {
        base.frozen = false;
        train_cfg.lora.targets.clear();
    }
    let tuned = finetune(&base, &train_cfg, &sequences, &labels)?;
    Ok(FittedModel::Transformer {
        bpe: vocab.to_text(),
        checkpoint: Checkpoint {
            base: tuned.base,
            adapters: tuned.adapters,
            seed,
        },
    })
}

/// Fit `method` on `train`. `seed` drives every random choice.
pub fn fit(method: Method, train: &LabeledDataset, hyper: &Hyper, seed: u64) -> Result<FittedModel> {
    if method.is_transformer() {
        return fit_transformer(method, train, hyper, seed);
    }
    let features = fit_features(method, train, hyper, seed)?;
    let x: Vec<DocVector> = train.texts().map(|t| features.transform(t)).collect();
    let mut params = hyper.ensemble.clone();
    params.forest.seed = seed::derive(seed, &[seed::tag("forest")]);
    let ensemble = Ensemble::fit(&x, &train.labels(), &params)?;
    Ok(FittedModel::Classical { features, ensemble })
}
