//! Labeled corpora: CSV ingestion, balance scenarios, stratified splits and
//! minority upsampling.
//!
//! Texts are stored verbatim. No normalization or preprocessing happens at
//! this layer.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Binary class label. `Threat` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonThreat = 0,
    Threat = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NonThreat, Label::Threat];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::NonThreat),
            1 => Some(Label::Threat),
            _ => None,
        }
    }

    pub fn from_bool(positive: bool) -> Label {
        if positive {
            Label::Threat
        } else {
            Label::NonThreat
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub label: Label,
    /// Opaque provenance tag, e.g. `file:row`.
    pub source_id: String,
}

impl Document {
    pub fn new(text: impl Into<String>, label: Label, source_id: impl Into<String>) -> Self {
        Document {
            text: text.into(),
            label,
            source_id: source_id.into(),
        }
    }
}

/// Ordered collection of labeled documents.
///
/// Class counts are maintained alongside the documents and are always
/// consistent with them; the only way to build a dataset is through
/// [`LabeledDataset::new`] or the operations in this module.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledDataset {
    docs: Vec<Document>,
    counts: [usize; 2],
}

impl LabeledDataset {
    pub fn new(docs: Vec<Document>) -> Self {
        let mut counts = [0usize; 2];
        for d in &docs {
            counts[d.label.index()] += 1;
        }
        LabeledDataset { docs, counts }
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn into_docs(self) -> Vec<Document> {
        self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.counts[label.index()]
    }

    /// `[nonthreat, threat]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn labels(&self) -> Vec<Label> {
        self.docs.iter().map(|d| d.label).collect()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.text.as_str())
    }

    pub fn of_class(&self, label: Label) -> impl Iterator<Item = &Document> {
        self.docs.iter().filter(move |d| d.label == label)
    }
}

/// Parameters for building one balance scenario from a threat set and a
/// non-threat pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_nonthreat: usize,
    pub nonthreat_pool_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub test_fraction: f64,
}

fn parse_label(raw: &str, row: usize) -> Result<Label> {
    match raw.trim() {
        "0" => Ok(Label::NonThreat),
        "1" => Ok(Label::Threat),
        other => Err(Error::UnknownLabel {
            row,
            value: other.to_string(),
        }),
    }
}

/// Load a `text,label` CSV file. Row numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    parse_csv(&bytes, &stem)
}

/// Parse CSV content already in memory. `source` prefixes each document's
/// `source_id`.
pub fn parse_csv(bytes: &[u8], source: &str) -> Result<LabeledDataset> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(Error::Empty("CSV file has no content".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let header: Vec<&str> = headers.iter().map(str::trim).collect();
    if header != ["text", "label"] {
        return Err(Error::MalformedRow {
            row: 0,
            reason: format!("expected header `text,label`, found `{}`", header.join(",")),
        });
    }

    let mut docs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let text = &record[0];
        if text.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty text".into(),
            });
        }
        let label = parse_label(&record[1], row)?;
        docs.push(Document::new(text, label, format!("{source}:{row}")));
    }
    if docs.is_empty() {
        return Err(Error::Empty("CSV file has a header but no rows".into()));
    }
    Ok(LabeledDataset::new(docs))
}

/// Serialize to the `text,label` CSV format (RFC 4180 quoting).
pub fn to_csv_bytes(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Parse(e.to_string());
    writer.write_record(["text", "label"]).map_err(to_err)?;
    for d in ds.docs() {
        writer
            .write_record([d.text.as_str(), &d.label.to_string()])
            .map_err(to_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_csv_bytes(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// All threat documents plus `spec.n_nonthreat` distinct pool documents
/// sampled without replacement.
pub fn build_scenario(
    threat: &LabeledDataset,
    nonthreat_pool: &LabeledDataset,
    spec: &ScenarioSpec,
) -> Result<LabeledDataset> {
    if threat.count(Label::NonThreat) > 0 {
        return Err(Error::InvalidParameter(
            "threat set contains non-threat documents".into(),
        ));
    }
    if nonthreat_pool.count(Label::Threat) > 0 {
        return Err(Error::InvalidParameter(format!(
            "pool `{}` contains threat documents",
            spec.nonthreat_pool_id
        )));
    }
    if spec.n_nonthreat == 0 {
        return Err(Error::InvalidParameter("n_nonthreat must be positive".into()));
    }
    if nonthreat_pool.len() < spec.n_nonthreat {
        return Err(Error::PoolTooSmall {
            requested: spec.n_nonthreat,
            available: nonthreat_pool.len(),
        });
    }
    let mut rng = seed::rng(spec.seed);
    let picked = rand::seq::index::sample(&mut rng, nonthreat_pool.len(), spec.n_nonthreat);
    let mut docs = threat.docs().to_vec();
    docs.extend(picked.iter().map(|i| nonthreat_pool.docs()[i].clone()));
    Ok(LabeledDataset::new(docs))
}

/// Round half up, e.g. 91.5 -> 92.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-class stratified split. Each class contributes
/// `round_half_up(test_fraction * count)` documents to the test side; the
/// choice within a class is a seeded shuffle. Both sides keep the original
/// document order.
pub fn stratified_split(ds: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let mut in_test = vec![false; ds.len()];
    for label in Label::ALL {
        let mut idx: Vec<usize> = ds
            .docs()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "class {label} has {} documents; at least 2 are required",
                idx.len()
            )));
        }
        let mut rng = seed::rng_for(seed, &[label.index() as u64]);
        idx.shuffle(&mut rng);
        let n_test = round_half_up(test_fraction * idx.len() as f64).min(idx.len());
        for &i in &idx[..n_test] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (d, t) in ds.docs().iter().zip(in_test) {
        if t {
            test.push(d.clone());
        } else {
            train.push(d.clone());
        }
    }
    Ok(SplitPair {
        train: LabeledDataset::new(train),
        test: LabeledDataset::new(test),
        test_fraction,
    })
}

/// Resample the minority class with replacement until it matches the
/// majority count. Majority documents pass through untouched and come first.
pub fn upsample_minority(train: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let [n0, n1] = train.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass(format!(
            "cannot upsample a dataset with counts {{0:{n0}, 1:{n1}}}"
        )));
    }
    if n0 == n1 {
        return Ok(train.clone());
    }
    let (majority, minority) = if n0 > n1 {
        (Label::NonThreat, Label::Threat)
    } else {
        (Label::Threat, Label::NonThreat)
    };
    let target = train.count(majority);
    let minority_docs: Vec<&Document> = train.of_class(minority).collect();
    let mut rng = seed::rng(seed);
    let mut docs: Vec<Document> = train.of_class(majority).cloned().collect();
    docs.extend(
        (0..target).map(|_| minority_docs[rng.random_range(0..minority_docs.len())].clone()),
    );
    Ok(LabeledDataset::new(docs))
}

/// Parameters of the synthetic two-class generator.
///
/// Each class owns `class_vocab` words drawn with Zipfian frequencies; a
/// further `shared_vocab` words form a distribution common to both classes.
/// Every token comes from the shared distribution with probability
/// `overlap` and from the class-specific one otherwise, so `overlap = 0`
/// gives disjoint vocabularies and `overlap = 1` identical distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub class_vocab: usize,
    pub shared_vocab: usize,
    pub overlap: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            class_vocab: 150,
            shared_vocab: 300,
            overlap: 0.5,
            min_len: 8,
            max_len: 20,
            zipf_exponent: 1.0,
        }
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ren", "tas", "vu", "po", "shi", "dar", "en", "ol", "ti", "gru", "nex", "sa",
    "bo",
];

/// Bijective index -> pseudo-word mapping (three syllables, base 16, with a
/// fourth syllable once the index outgrows 16^3).
pub fn synth_word(index: usize) -> String {
    let base = SYLLABLES.len();
    let mut n = index;
    let mut out = String::new();
    for _ in 0..3 {
        out.push_str(SYLLABLES[n % base]);
        n /= base;
    }
    while n > 0 {
        out.push_str(SYLLABLES[n % base]);
        n /= base;
    }
    out
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(exponent)).collect()
}

/// Generate a synthetic corpus with `n_per_class` documents of each class.
/// Documents alternate by class (threat first) so any prefix is balanced.
pub fn synth_corpus(n_per_class: usize, params: &SynthParams, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidParameter("n_per_class must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&params.overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap must lie in [0,1], got {}",
            params.overlap
        )));
    }
    if params.min_len == 0 || params.min_len > params.max_len {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= min_len <= max_len, got {}..{}",
            params.min_len, params.max_len
        )));
    }
    if params.class_vocab == 0 && params.overlap < 1.0 {
        return Err(Error::InvalidParameter(
            "class_vocab must be positive unless overlap is 1".into(),
        ));
    }
    if params.shared_vocab == 0 && params.overlap > 0.0 {
        return Err(Error::InvalidParameter(
            "shared_vocab must be positive when overlap > 0".into(),
        ));
    }

    let cv = params.class_vocab;
    let class_words: [Vec<String>; 2] = [
        (0..cv).map(synth_word).collect(),
        (cv..2 * cv).map(synth_word).collect(),
    ];
    let shared_words: Vec<String> = (2 * cv..2 * cv + params.shared_vocab)
        .map(synth_word)
        .collect();
    let make_dist = |n: usize| {
        if n == 0 {
            None
        } else {
            Some(WeightedIndex::new(zipf_weights(n, params.zipf_exponent)).expect("positive weights"))
        }
    };
    let class_dist = make_dist(cv);
    let shared_dist = make_dist(params.shared_vocab);

    let mut rng = seed::rng(seed);
    let mut docs = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        for label in [Label::Threat, Label::NonThreat] {
            let len = rng.random_range(params.min_len..=params.max_len);
            let mut words: Vec<&str> = Vec::with_capacity(len);
            for _ in 0..len {
                let shared = rng.random::<f64>() < params.overlap;
                let w = if shared {
                    &shared_words[shared_dist.as_ref().expect("checked").sample(&mut rng)]
                } else {
                    &class_words[label.index()][class_dist.as_ref().expect("checked").sample(&mut rng)]
                };
                words.push(w);
            }
            docs.push(Document::new(
                words.join(" "),
                label,
                format!("synth:{}:{i}", label.index()),
            ));
        }
    }
    Ok(LabeledDataset::new(docs))
}

/// Set of texts in `ds` belonging to `label`.
pub fn texts_of(ds: &LabeledDataset, label: Label) -> HashSet<&str> {
    ds.of_class(label).map(|d| d.text.as_str()).collect()
}
