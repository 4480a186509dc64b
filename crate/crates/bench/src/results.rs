//! Per-cell result rows and their CSV form.

use serde::{Deserialize, Serialize};
use threatbench_core::metrics::MetricReport;

use crate::config::Method;
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    /// Metrics rounded to 2 decimals, as stored in `results.csv`.
    Ok(MetricReport),
    Failed(String),
}

/// One evaluated `(scenario, seed, method, upsampling)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub seed: u64,
    pub method: Method,
    pub upsampled: bool,
    /// SHA-256 of the test split in CSV form.
    pub test_sha256: String,
    pub outcome: Outcome,
    /// Wall-clock fitting and scoring time. Not written to `results.csv`,
    /// which must be reproducible byte for byte.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl ResultRow {
    pub fn report(&self) -> Option<&MetricReport> {
        match &self.outcome {
            Outcome::Ok(r) => Some(r),
            Outcome::Failed(_) => None,
        }
    }
}

const LEAD: [&str; 6] = ["scenario", "seed", "method", "upsampled", "status", "test_sha256"];

fn header() -> Vec<String> {
    LEAD.iter()
        .map(|s| s.to_string())
        .chain(MetricReport::CSV_HEADER.split(',').map(str::to_string))
        .chain(std::iter::once("error".to_string()))
        .collect()
}

pub fn write_results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header())?;
    let n_metrics = MetricReport::CSV_HEADER.split(',').count();
    for r in rows {
        let mut rec = vec![
            r.scenario.clone(),
            r.seed.to_string(),
            r.method.key().to_string(),
            r.upsampled.to_string(),
        ];
        match &r.outcome {
            Outcome::Ok(m) => {
                rec.push("ok".into());
                rec.push(r.test_sha256.clone());
                rec.extend(m.to_csv_row().split(',').map(str::to_string));
                rec.push(String::new());
            }
            Outcome::Failed(e) => {
                rec.push("failed".into());
                rec.push(r.test_sha256.clone());
                rec.extend(std::iter::repeat_n(String::new(), n_metrics));
                rec.push(e.replace(['\n', '\r'], " "));
            }
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| BenchError::Results(e.to_string()))
}

pub fn read_results_csv(bytes: &[u8]) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let want = header();
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != want {
        return Err(BenchError::Results(format!("unexpected header {got:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| BenchError::Results(format!("line {line}: bad {what}"));
        let fields: Vec<&str> = rec.iter().collect();
        let seed = fields[1].parse::<u64>().map_err(|_| bad("seed"))?;
        let method = fields[2].parse::<Method>().map_err(|_| bad("method"))?;
        let upsampled = fields[3].parse::<bool>().map_err(|_| bad("upsampled flag"))?;
        let outcome = match fields[4] {
            "ok" => Outcome::Ok(
                MetricReport::from_csv_fields(&fields[6..fields.len() - 1])
                    .map_err(|e| BenchError::Results(format!("line {line}: {e}")))?,
            ),
            "failed" => Outcome::Failed(fields[fields.len() - 1].to_string()),
            _ => return Err(bad("status")),
        };
        rows.push(ResultRow {
            scenario: fields[0].to_string(),
            seed,
            method,
            upsampled,
            test_sha256: fields[5].to_string(),
            outcome,
            runtime_secs: 0.0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use threatbench_core::metrics::ConfusionCounts;

    fn row(method: Method, upsampled: bool, outcome: Outcome) -> ResultRow {
        ResultRow {
            scenario: "s".into(),
            seed: 3,
            method,
            upsampled,
            test_sha256: "ab".repeat(32),
            outcome,
            runtime_secs: 1.5,
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = MetricReport {
            accuracy: 97.5,
            precision: 90.0,
            recall: 81.82,
            f_05: 88.24,
            f_1: 85.71,
            f_2: 83.33,
            auc: 99.12,
            f_degenerate: false,
            counts: ConfusionCounts { tp: 9, fp: 1, tn: 100, fn_: 2 },
        };
        let rows = vec![
            row(Method::Tfidf, false, Outcome::Ok(m)),
            row(Method::Lda, true, Outcome::Failed("pool `x`, too small\nsecond line".into())),
        ];
        let bytes = write_results_csv(&rows).unwrap();
        let back = read_results_csv(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].outcome, rows[0].outcome);
        assert_eq!(back[1].outcome, Outcome::Failed("pool `x`, too small second line".into()));
        assert_eq!(write_results_csv(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(read_results_csv(b"a,b\n1,2\n").is_err());
    }
}
