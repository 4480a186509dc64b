//! Runs the `(scenario, seed, method, upsampling)` grid and writes the
//! output directory.
//!
//! Every random stream is derived from the run seed plus string tags for the
//! stage, scenario and method, so a cell's result does not depend on which
//! other cells ran. Output files carry no timestamps or timings.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use threatbench_core::corpus::{
    build_scenario, load_csv, stratified_split, synth_corpus, to_csv_bytes, upsample_minority, Label, LabeledDataset,
    ScenarioSpec, SplitPair,
};
use threatbench_core::metrics::report;
use threatbench_core::seed::{derive, tag};

use crate::artifact::Artifact;
use crate::config::{ExperimentConfig, Method, ScenarioConfig};
use crate::error::{BenchError, Result};
use crate::pipeline::fit;
use crate::results::{write_results_csv, Outcome, ResultRow};
use crate::table::{emit_table, ResultTable, TableFormat};

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_MD: &str = "results.md";
pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The full labelled dataset of one scenario for one run seed.
pub fn scenario_dataset(scenario: &ScenarioConfig, base_dir: &Path, seed: u64) -> Result<LabeledDataset> {
    let (threat, pool) = match (&scenario.synthetic, &scenario.csv) {
        (Some(syn), None) => {
            let n = syn.n_threat.max(scenario.n_nonthreat);
            let corpus = synth_corpus(n, &syn.params, derive(seed, &[tag("synthetic"), tag(&scenario.id)]))?;
            let threat: Vec<_> = corpus.of_class(Label::Threat).take(syn.n_threat).cloned().collect();
            let pool: Vec<_> = corpus.of_class(Label::NonThreat).cloned().collect();
            (LabeledDataset::new(threat), LabeledDataset::new(pool))
        }
        (None, Some(csv)) => (load_csv(base_dir.join(&csv.threat))?, load_csv(base_dir.join(&csv.nonthreat))?),
        _ => {
            return Err(BenchError::Config(format!(
                "scenario `{}` needs exactly one of `synthetic` or `csv`",
                scenario.id
            )))
        }
    };
    let spec = ScenarioSpec {
        n_nonthreat: scenario.n_nonthreat,
        nonthreat_pool_id: scenario.id.clone(),
        seed: derive(seed, &[tag("scenario"), tag(&scenario.id)]),
    };
    Ok(build_scenario(&threat, &pool, &spec)?)
}

/// The train/test split shared by every method and upsampling mode.
pub fn scenario_split(cfg: &ExperimentConfig, scenario: &ScenarioConfig, base_dir: &Path, seed: u64) -> Result<SplitPair> {
    let ds = scenario_dataset(scenario, base_dir, seed)?;
    Ok(stratified_split(&ds, cfg.test_fraction, derive(seed, &[tag("split"), tag(&scenario.id)]))?)
}

/// The training side of `split`, with the minority class upsampled when
/// `upsampled` is set. The test side is never touched.
pub fn training_set(split: &SplitPair, scenario_id: &str, seed: u64, upsampled: bool) -> Result<LabeledDataset> {
    if upsampled {
        Ok(upsample_minority(&split.train, derive(seed, &[tag("upsample"), tag(scenario_id)]))?)
    } else {
        Ok(split.train.clone())
    }
}

pub fn model_seed(seed: u64, method: Method, scenario_id: &str) -> u64 {
    derive(seed, &[tag("model"), tag(method.key()), tag(scenario_id)])
}

/// Path of a cell's model file below the output directory.
pub fn checkpoint_path(out_dir: &Path, scenario_id: &str, method: Method, seed: u64, upsampled: bool) -> PathBuf {
    let mode = if upsampled { "upsampled" } else { "plain" };
    out_dir
        .join(CHECKPOINT_DIR)
        .join(scenario_id)
        .join(method.key())
        .join(format!("seed{seed}-{mode}.bin"))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}

/// Fit, score and optionally save one cell.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    method: Method,
    scenario_id: &str,
    seed: u64,
    upsampled: bool,
    split: &SplitPair,
    save_to: Option<&Path>,
) -> Result<threatbench_core::metrics::MetricReport> {
    let train = training_set(split, scenario_id, seed, upsampled)?;
    let model = fit(method, &train, &cfg.hyper, model_seed(seed, method, scenario_id))?;
    let probs = model.predict(split.test.texts())?;
    let metrics = report(&probs, &split.test.labels(), cfg.threshold)?;
    if let Some(out_dir) = save_to {
        let artifact = Artifact {
            method,
            scenario: scenario_id.to_string(),
            seed,
            upsampled,
            threshold: cfg.threshold,
            model,
        };
        artifact.save(&checkpoint_path(out_dir, scenario_id, method, seed, upsampled))?;
    }
    Ok(metrics.rounded())
}

/// Run every cell of `cfg`. Cell failures, including panics, become failed
/// rows and the grid carries on. `on_row` sees each row as it completes.
///
/// Rows come out scenario-major, then seed, method (config order) and
/// upsampling mode (plain first).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    checkpoint_root: Option<&Path>,
    on_row: &mut dyn FnMut(&ResultRow),
) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for scenario in &cfg.scenarios {
        for &seed in &cfg.seeds {
            let split = scenario_split(cfg, scenario, base_dir, seed).and_then(|s| {
                let hash = sha256_hex(&to_csv_bytes(&s.test)?);
                Ok((s, hash))
            });
            for &method in &cfg.methods {
                for &upsampled in cfg.upsampling.modes() {
                    let start = Instant::now();
                    let (outcome, test_sha256) = match &split {
                        Err(e) => (Outcome::Failed(format!("scenario data: {e}")), String::new()),
                        Ok((split, hash)) => {
                            let save_to = checkpoint_root.filter(|_| cfg.save_checkpoints);
                            let res = catch_unwind(AssertUnwindSafe(|| {
                                run_cell(cfg, method, &scenario.id, seed, upsampled, split, save_to)
                            }));
                            let outcome = match res {
                                Ok(Ok(m)) => Outcome::Ok(m),
                                Ok(Err(e)) => Outcome::Failed(e.to_string()),
                                Err(p) => Outcome::Failed(panic_message(p)),
                            };
                            (outcome, hash.clone())
                        }
                    };
                    let row = ResultRow {
                        scenario: scenario.id.clone(),
                        seed,
                        method,
                        upsampled,
                        test_sha256,
                        outcome,
                        runtime_secs: start.elapsed().as_secs_f64(),
                    };
                    on_row(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_file: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub scenarios: Vec<String>,
    pub upsampling: String,
    /// Input CSV path (as written in the config) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file path relative to the output directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub rows: usize,
    pub failed_rows: usize,
}

/// What a finished `bench` run produced.
#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub out_dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub table: ResultTable,
    pub manifest: Manifest,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

fn relative_slash(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Run the grid and write `results.csv`, `results.md`, checkpoints and
/// `manifest.json` into `out_dir`. `config_bytes` and `config_name` identify
/// the config file in the manifest; `base_dir` resolves input CSV paths.
pub fn run_bench(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    config_name: &str,
    base_dir: &Path,
    out_dir: &Path,
    on_row: &mut dyn FnMut(&ResultRow),
) -> Result<BenchOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    let mut inputs = BTreeMap::new();
    for s in &cfg.scenarios {
        if let Some(c) = &s.csv {
            for p in [&c.threat, &c.nonthreat] {
                let full = base_dir.join(p);
                let bytes = std::fs::read(&full).map_err(|e| BenchError::io(&full, e))?;
                inputs.insert(p.to_string_lossy().into_owned(), sha256_hex(&bytes));
            }
        }
    }

    let rows = run_experiment(cfg, base_dir, Some(out_dir), on_row)?;
    let table = ResultTable::from_rows(&rows);

    let mut outputs = BTreeMap::new();
    let csv_bytes = write_results_csv(&rows)?;
    write_file(&out_dir.join(RESULTS_CSV), &csv_bytes)?;
    outputs.insert(RESULTS_CSV.to_string(), sha256_hex(&csv_bytes));
    let md = emit_table(&table, TableFormat::Markdown)?;
    write_file(&out_dir.join(RESULTS_MD), md.as_bytes())?;
    outputs.insert(RESULTS_MD.to_string(), sha256_hex(md.as_bytes()));
    if cfg.save_checkpoints {
        for r in rows.iter().filter(|r| r.report().is_some()) {
            let p = checkpoint_path(out_dir, &r.scenario, r.method, r.seed, r.upsampled);
            let bytes = std::fs::read(&p).map_err(|e| BenchError::io(&p, e))?;
            outputs.insert(relative_slash(&p, out_dir), sha256_hex(&bytes));
        }
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_file: config_name.to_string(),
        config_sha256: sha256_hex(config_bytes),
        seeds: cfg.seeds.clone(),
        methods: cfg.methods.iter().map(|m| m.key().to_string()).collect(),
        scenarios: cfg.scenarios.iter().map(|s| s.id.clone()).collect(),
        upsampling: format!("{:?}", cfg.upsampling).to_lowercase(),
        inputs,
        outputs,
        rows: rows.len(),
        failed_rows: rows.iter().filter(|r| r.report().is_none()).count(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| BenchError::Results(e.to_string()))?;
    json.push('\n');
    write_file(&out_dir.join(MANIFEST), json.as_bytes())?;

    Ok(BenchOutput { out_dir: out_dir.to_path_buf(), rows, table, manifest })
}
