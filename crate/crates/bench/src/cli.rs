//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage errors and unreadable or invalid
//! config files, 1 for failures while running.
//!
//! Relative paths inside a config file (input CSVs, `output_dir`) resolve
//! against the directory holding the config file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use threatbench_core::corpus::{load_csv, write_csv};
use threatbench_core::metrics::report;

use crate::artifact::Artifact;
use crate::config::{ExperimentConfig, Method};
use crate::error::{BenchError, Result};
use crate::pipeline::fit;
use crate::results::{read_results_csv, Outcome};
use crate::runner::{model_seed, run_bench, scenario_dataset, scenario_split, training_set};
use crate::table::{emit_table, ResultTable, TableFormat};

#[derive(Debug, Parser)]
#[command(name = "threatbench", version, about = "Threat-text classification benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build each scenario's dataset and train/test split as CSV files.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Use this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit one method on one scenario and save the model file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Method,
        /// Scenario id; defaults to the first scenario in the config.
        #[arg(long)]
        scenario: Option<String>,
        /// Defaults to the first seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Upsample the minority class of the training split.
        #[arg(long)]
        upsample: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the held-out test split here.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Score a `text,label` CSV with a saved model and print the metrics as JSON.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the threshold stored in the model file.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the full grid and write results, tables, checkpoints and a manifest.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Use this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `output_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Suppress per-cell progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Render a results table from a `results.csv` file.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: TableFormat,
    },
}

enum Failure {
    Usage(String),
    Runtime(BenchError),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Runtime(e)
    }
}

struct LoadedConfig {
    cfg: ExperimentConfig,
    bytes: Vec<u8>,
    name: String,
    base_dir: PathBuf,
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<LoadedConfig, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::Usage(format!("config {} is not UTF-8", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)
        .map_err(|e| Failure::Usage(format!("cannot parse config {}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(LoadedConfig { cfg, bytes, name, base_dir })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Runtime(BenchError::io("<stdout>", e));
    match cmd {
        Command::Prepare { config, seed, out_dir } => {
            let l = load_config(&config, seed)?;
            for s in &l.cfg.scenarios {
                for &seed in &l.cfg.seeds {
                    let dir = out_dir.join(&s.id).join(format!("seed{seed}"));
                    create_dir(&dir)?;
                    let ds = scenario_dataset(s, &l.base_dir, seed)?;
                    let split = scenario_split(&l.cfg, s, &l.base_dir, seed)?;
                    write_csv(&ds, dir.join("dataset.csv")).map_err(BenchError::from)?;
                    write_csv(&split.train, dir.join("train.csv")).map_err(BenchError::from)?;
                    write_csv(&split.test, dir.join("test.csv")).map_err(BenchError::from)?;
                    let up = training_set(&split, &s.id, seed, true)?;
                    write_csv(&up, dir.join("train_upsampled.csv")).map_err(BenchError::from)?;
                    writeln!(out, "{}: {} documents, class counts {:?}", dir.display(), ds.len(), ds.class_counts())
                        .map_err(io)?;
                }
            }
        }
        Command::Train { config, method, scenario, seed, upsample, out: model_out, test_out } => {
            let l = load_config(&config, seed)?;
            let s = match &scenario {
                Some(id) => l
                    .cfg
                    .scenarios
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| Failure::Usage(format!("no scenario `{id}` in {}", config.display())))?,
                None => &l.cfg.scenarios[0],
            };
            let seed = l.cfg.seeds[0];
            let split = scenario_split(&l.cfg, s, &l.base_dir, seed)?;
            let train = training_set(&split, &s.id, seed, upsample)?;
            let model = fit(method, &train, &l.cfg.hyper, model_seed(seed, method, &s.id))?;
            let artifact = Artifact {
                method,
                scenario: s.id.clone(),
                seed,
                upsampled: upsample,
                threshold: l.cfg.threshold,
                model,
            };
            artifact.save(&model_out)?;
            if let Some(p) = test_out {
                write_csv(&split.test, &p).map_err(BenchError::from)?;
            }
            writeln!(out, "wrote {} ({} on `{}`, seed {seed})", model_out.display(), method.label(), s.id).map_err(io)?;
        }
        Command::Evaluate { model, data, threshold } => {
            let artifact = Artifact::load(&model)?;
            let ds = load_csv(&data).map_err(BenchError::from)?;
            let probs = artifact.model.predict(ds.texts())?;
            let m = report(&probs, &ds.labels(), threshold.unwrap_or(artifact.threshold)).map_err(BenchError::from)?;
            writeln!(out, "{}", m.to_json()).map_err(io)?;
        }
        Command::Bench { config, seed, out_dir, quiet } => {
            let l = load_config(&config, seed)?;
            let out_dir = out_dir.unwrap_or_else(|| l.base_dir.join(&l.cfg.output_dir));
            let total = l.cfg.methods.len() * l.cfg.scenarios.len() * l.cfg.seeds.len() * l.cfg.upsampling.modes().len();
            let mut done = 0usize;
            let mut progress = |r: &crate::results::ResultRow| {
                done += 1;
                if quiet {
                    return;
                }
                let mode = if r.upsampled { "upsampled" } else { "plain" };
                let status = match &r.outcome {
                    Outcome::Ok(m) => format!("acc {:.2} f1 {:.2} auc {:.2}", m.accuracy, m.f_1, m.auc),
                    Outcome::Failed(e) => format!("FAILED: {e}"),
                };
                let _ = writeln!(
                    err,
                    "[{done}/{total}] {} seed {} {} {mode}: {status} ({:.1} s)",
                    r.scenario,
                    r.seed,
                    r.method.key(),
                    r.runtime_secs
                );
            };
            let result = run_bench(&l.cfg, &l.bytes, &l.name, &l.base_dir, &out_dir, &mut progress)?;
            write!(out, "{}", emit_table(&result.table, TableFormat::Markdown)?).map_err(io)?;
            if result.manifest.failed_rows > 0 {
                return Err(Failure::Runtime(BenchError::Results(format!(
                    "{} of {} cells failed; see {}",
                    result.manifest.failed_rows,
                    result.manifest.rows,
                    out_dir.join(crate::runner::RESULTS_CSV).display()
                ))));
            }
        }
        Command::Report { input, format } => {
            let bytes = std::fs::read(&input).map_err(|e| BenchError::io(&input, e))?;
            let rows = read_results_csv(&bytes)?;
            let table = ResultTable::from_rows(&rows);
            if table.is_empty() {
                return Err(Failure::Runtime(BenchError::Results(format!("{} has no rows", input.display()))));
            }
            write!(out, "{}", emit_table(&table, format)?).map_err(io)?;
        }
    }
    Ok(())
}

/// Parse `args` (including the program name) and run the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
