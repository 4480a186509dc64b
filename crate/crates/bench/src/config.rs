//! Experiment configuration, read from TOML.
//!
//! A minimal file:
//!
//! ```toml
//! methods = ["tfidf", "lsi", "transformer_lora"]
//! seeds = [1, 2, 3]
//! upsampling = "both"
//!
//! [[scenarios]]
//! id = "imbalanced"
//! n_nonthreat = 5000
//! [scenarios.synthetic]
//! n_threat = 915
//! overlap = 0.5
//! ```
//!
//! Relative paths (output directory, CSV inputs) resolve against the
//! directory holding the config file. `configs/` in this crate documents
//! every key.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use threatbench_core::classifiers::EnsembleParams;
use threatbench_core::corpus::SynthParams;
use threatbench_core::embeddings::{GloveParams, Word2VecParams};
use threatbench_core::topics::SvdParams;
use threatbench_neural::train::TrainConfig;
use threatbench_neural::TransformerConfig;

use crate::error::{BenchError, Result};

/// A feature pipeline feeding the ensemble, or one of the transformer
/// variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tfidf,
    Glove,
    Cbow,
    Skipgram,
    Lda,
    Lsi,
    TransformerLora,
    /// The transformer with every weight trainable and no adapters.
    TransformerFull,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Tfidf,
        Method::Glove,
        Method::Cbow,
        Method::Skipgram,
        Method::Lda,
        Method::Lsi,
        Method::TransformerLora,
        Method::TransformerFull,
    ];

    /// Identifier used in configs, CSV files and paths.
    pub fn key(self) -> &'static str {
        match self {
            Method::Tfidf => "tfidf",
            Method::Glove => "glove",
            Method::Cbow => "cbow",
            Method::Skipgram => "skipgram",
            Method::Lda => "lda",
            Method::Lsi => "lsi",
            Method::TransformerLora => "transformer_lora",
            Method::TransformerFull => "transformer_full",
        }
    }

    /// Row label in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Tfidf => "TF-IDF",
            Method::Glove => "GloVe",
            Method::Cbow => "Word2Vec (CBOW)",
            Method::Skipgram => "Word2Vec (skip-gram)",
            Method::Lda => "LDA",
            Method::Lsi => "LSI",
            Method::TransformerLora => "Mini-transformer (LoRA)",
            Method::TransformerFull => "Mini-transformer (full fine-tune)",
        }
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, Method::TransformerLora | Method::TransformerFull)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    Off,
    On,
    #[default]
    Both,
}

impl Upsampling {
    /// Training modes to run, plain first.
    pub fn modes(self) -> &'static [bool] {
        match self {
            Upsampling::Off => &[false],
            Upsampling::On => &[true],
            Upsampling::Both => &[false, true],
        }
    }
}

/// Synthetic source: `max(n_threat, n_nonthreat)` documents per class are
/// generated and the scenario samples from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub n_threat: usize,
    #[serde(flatten)]
    pub params: SynthParams,
}

/// CSV source: every row of `threat` must be labeled 1 and every row of
/// `nonthreat` labeled 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub threat: PathBuf,
    pub nonthreat: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    /// Non-threat documents sampled into the scenario.
    pub n_nonthreat: usize,
    pub synthetic: Option<SyntheticSource>,
    pub csv: Option<CsvSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GloveHyper {
    pub window: usize,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub x_max: f64,
    pub alpha: f64,
}

impl Default for GloveHyper {
    fn default() -> Self {
        let p = GloveParams::default();
        GloveHyper {
            window: 10,
            dim: p.dim,
            epochs: p.epochs,
            lr: p.lr,
            x_max: p.x_max,
            alpha: p.alpha,
        }
    }
}

impl GloveHyper {
    pub fn params(&self, seed: u64) -> GloveParams {
        GloveParams {
            dim: self.dim,
            epochs: self.epochs,
            lr: self.lr,
            x_max: self.x_max,
            alpha: self.alpha,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaHyper {
    pub k: usize,
    /// Defaults to `50 / k`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iters: usize,
    /// Gibbs sweeps when inferring a new document's topic mixture.
    pub infer_iters: usize,
}

impl Default for LdaHyper {
    fn default() -> Self {
        LdaHyper {
            k: 20,
            alpha: None,
            beta: 0.01,
            iters: 200,
            infer_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsiHyper {
    /// Requested rank, clamped to the corpus.
    pub k: usize,
    pub svd: SvdParams,
}

impl Default for LsiHyper {
    fn default() -> Self {
        LsiHyper {
            k: 100,
            svd: SvdParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerHyper {
    /// BPE vocabulary size; the model's `vocab_size` is set from the
    /// trained vocabulary.
    pub bpe_vocab: usize,
    pub model: TransformerConfig,
    pub train: TrainConfig,
}

impl Default for TransformerHyper {
    fn default() -> Self {
        TransformerHyper {
            bpe_vocab: 1024,
            model: TransformerConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub ensemble: EnsembleParams,
    pub word2vec: Word2VecParams,
    pub glove: GloveHyper,
    pub lda: LdaHyper,
    pub lsi: LsiHyper,
    pub transformer: TransformerHyper,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_test_fraction() -> f64 {
    0.1
}

fn default_threshold() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub upsampling: Upsampling,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Decision threshold on the threat probability.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Write one model file per grid cell under `checkpoints/`.
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub hyper: Hyper,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Parse and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|source| BenchError::ConfigSyntax {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(BenchError::Config("`methods` must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Config("`seeds` must not be empty".into()));
        }
        if self.scenarios.is_empty() {
            return Err(BenchError::Config("`scenarios` must not be empty".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(BenchError::Config(format!("method `{m}` listed twice")));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(BenchError::Config(format!("seed {s} listed twice")));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(BenchError::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(BenchError::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            let id_ok = !s.id.is_empty() && s.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !id_ok {
                return Err(BenchError::Config(format!(
                    "scenario id `{}` must be non-empty ASCII letters, digits, `_` or `-`",
                    s.id
                )));
            }
            if self.scenarios[..i].iter().any(|o| o.id == s.id) {
                return Err(BenchError::Config(format!("scenario id `{}` used twice", s.id)));
            }
            if s.synthetic.is_some() == s.csv.is_some() {
                return Err(BenchError::Config(format!(
                    "scenario `{}` needs exactly one of [scenarios.synthetic] or [scenarios.csv]",
                    s.id
                )));
            }
            if s.n_nonthreat == 0 {
                return Err(BenchError::Config(format!("scenario `{}`: n_nonthreat must be positive", s.id)));
            }
            if let Some(syn) = &s.synthetic {
                if syn.n_threat == 0 {
                    return Err(BenchError::Config(format!("scenario `{}`: n_threat must be positive", s.id)));
                }
            }
        }
        Ok(())
    }

    /// Every input CSV, resolved against `base_dir`, in scenario order.
    pub fn input_files(&self, base_dir: &Path) -> Vec<PathBuf> {
        self.scenarios
            .iter()
            .filter_map(|s| s.csv.as_ref())
            .flat_map(|c| [base_dir.join(&c.threat), base_dir.join(&c.nonthreat)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
methods = ["tfidf", "transformer_lora"]

[[scenarios]]
id = "s1"
n_nonthreat = 50
[scenarios.synthetic]
n_threat = 10
overlap = 0.25
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.upsampling, Upsampling::Both);
        assert_eq!(c.test_fraction, 0.1);
        let syn = c.scenarios[0].synthetic.as_ref().unwrap();
        assert_eq!(syn.params.overlap, 0.25);
        assert_eq!(syn.params.class_vocab, SynthParams::default().class_vocab);
        assert_eq!(c.hyper.transformer.train.batch_size, 16);
    }

    #[test]
    fn nested_hyperparameters_parse() {
        let text = format!(
            "{MINIMAL}\n[hyper.transformer.train.optimizer]\nlr = 5e-4\n[hyper.lda]\nk = 8\n[hyper.ensemble.forest]\nn_trees = 7\n"
        );
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.hyper.transformer.train.optimizer.lr, 5e-4);
        assert_eq!(c.hyper.transformer.train.optimizer.eps, 1e-8);
        assert_eq!(c.hyper.lda.k, 8);
        assert_eq!(c.hyper.ensemble.forest.n_trees, 7);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("methods = [\"bert\"]\nscenarios = []").is_err());
        assert!(ExperimentConfig::from_toml(&format!("bogus = 1\n{MINIMAL}")).is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.scenarios[0].csv = Some(CsvSource { threat: "a".into(), nonthreat: "b".into() });
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.methods.push(Method::Tfidf);
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_keys_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.key().parse::<Method>().unwrap(), m);
        }
        assert!(!Method::TransformerFull.label().contains("BERT"));
    }
}
