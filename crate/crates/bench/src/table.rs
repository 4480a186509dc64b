//! Mean-over-seeds result tables in Markdown or CSV.
//!
//! Each `(scenario, method)` pair becomes one row. When both upsampling
//! modes were run, a cell reads `plain (upsampled)`, e.g. `94.59 (94.09)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use threatbench_core::metrics::{round2, MetricReport};

use crate::config::Method;
use crate::error::{BenchError, Result};
use crate::results::ResultRow;

/// Column headers, in rendering order.
pub const COLUMNS: [&str; 5] = ["Acc", "F1", "F0.5", "F2", "AUC"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(BenchError::Config(format!("unknown table format `{other}`"))),
        }
    }
}

/// Mean metrics over the successful seeds of one upsampling mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// Acc, F1, F0.5, F2, AUC, each rounded to 2 decimals. `None` when
    /// every seed failed.
    pub values: Option<[f64; 5]>,
    pub n_ok: usize,
    pub n_failed: usize,
}

impl ModeSummary {
    fn from_rows<'a>(rows: impl Iterator<Item = &'a ResultRow>) -> Option<Self> {
        let mut sums = [0.0f64; 5];
        let (mut n_ok, mut n_failed) = (0usize, 0usize);
        for r in rows {
            match r.report() {
                Some(m) => {
                    for (s, v) in sums.iter_mut().zip(metric_values(m)) {
                        *s += v;
                    }
                    n_ok += 1;
                }
                None => n_failed += 1,
            }
        }
        if n_ok + n_failed == 0 {
            return None;
        }
        let values = (n_ok > 0).then(|| sums.map(|s| round2(s / n_ok as f64)));
        Some(ModeSummary { values, n_ok, n_failed })
    }
}

fn metric_values(m: &MetricReport) -> [f64; 5] {
    let m = m.rounded();
    [m.accuracy, m.f_1, m.f_05, m.f_2, m.auc]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub method: Method,
    pub plain: Option<ModeSummary>,
    pub upsampled: Option<ModeSummary>,
}

/// Rows ordered by scenario, then method, each in order of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

impl ResultTable {
    pub fn from_rows(rows: &[ResultRow]) -> Self {
        let mut scenarios: Vec<&str> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        for r in rows {
            if !scenarios.contains(&r.scenario.as_str()) {
                scenarios.push(&r.scenario);
            }
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        let mut out = Vec::new();
        for s in &scenarios {
            for &m in &methods {
                let cell = || rows.iter().filter(|r| r.scenario == *s && r.method == m);
                let plain = ModeSummary::from_rows(cell().filter(|r| !r.upsampled));
                let upsampled = ModeSummary::from_rows(cell().filter(|r| r.upsampled));
                if plain.is_some() || upsampled.is_some() {
                    out.push(TableRow { scenario: s.to_string(), method: m, plain, upsampled });
                }
            }
        }
        ResultTable { rows: out }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn fmt_value(summary: &Option<ModeSummary>, i: usize) -> Option<String> {
    summary.as_ref().map(|s| match s.values {
        Some(v) => format!("{:.2}", v[i]),
        None => "failed".to_string(),
    })
}

/// `plain (upsampled)` when both modes ran, otherwise whichever one did,
/// with upsampled-only values still bracketed.
pub fn format_cell(row: &TableRow, i: usize) -> String {
    match (fmt_value(&row.plain, i), fmt_value(&row.upsampled, i)) {
        (Some(p), Some(u)) => format!("{p} ({u})"),
        (Some(p), None) => p,
        (None, Some(u)) => format!("({u})"),
        (None, None) => String::new(),
    }
}

fn failures(row: &TableRow) -> usize {
    [&row.plain, &row.upsampled].iter().filter_map(|s| s.as_ref()).map(|s| s.n_failed).sum()
}

fn seeds_used(table: &ResultTable) -> usize {
    table
        .rows
        .iter()
        .flat_map(|r| [&r.plain, &r.upsampled])
        .filter_map(|s| s.as_ref())
        .map(|s| s.n_ok + s.n_failed)
        .max()
        .unwrap_or(0)
}

fn render_markdown(table: &ResultTable) -> String {
    let mut out = String::new();
    let any_upsampled = table.rows.iter().any(|r| r.upsampled.is_some());
    let mut scenario: Option<&str> = None;
    let mut failed_total = 0;
    for row in &table.rows {
        if scenario != Some(row.scenario.as_str()) {
            if scenario.is_some() {
                out.push('\n');
            }
            scenario = Some(&row.scenario);
            let _ = writeln!(out, "## Scenario `{}`\n", row.scenario);
            let _ = writeln!(out, "| Method | {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(COLUMNS.len()));
        }
        let cells: Vec<String> = (0..COLUMNS.len()).map(|i| format_cell(row, i)).collect();
        let n_failed = failures(row);
        failed_total += n_failed;
        let mark = if n_failed > 0 { format!(" [{n_failed} failed]") } else { String::new() };
        let _ = writeln!(out, "| {}{mark} | {} |", row.method.label(), cells.join(" | "));
    }
    out.push('\n');
    let _ = writeln!(out, "Percentages, mean over {} seed(s).", seeds_used(table));
    if any_upsampled {
        out.push_str("Bracketed numbers come from the same cell with the minority class of the training split upsampled.\n");
    }
    if failed_total > 0 {
        let _ = writeln!(out, "{failed_total} cell run(s) failed; see results.csv for the errors.");
    }
    out
}

const CSV_LEAD: [&str; 3] = ["scenario", "method", "upsampled"];
const CSV_METRICS: [&str; 5] = ["acc", "f1", "f05", "f2", "auc"];

fn render_csv(table: &ResultTable) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header: Vec<&str> = CSV_LEAD.iter().chain(&CSV_METRICS).chain(&["n_ok", "n_failed"]).copied().collect();
    w.write_record(&header)?;
    for row in &table.rows {
        for (flag, summary) in [(false, &row.plain), (true, &row.upsampled)] {
            let Some(s) = summary else { continue };
            let mut rec = vec![row.scenario.clone(), row.method.key().to_string(), flag.to_string()];
            match s.values {
                Some(v) => rec.extend(v.iter().map(|x| format!("{x:.2}"))),
                None => rec.extend(std::iter::repeat_n(String::new(), 5)),
            }
            rec.push(s.n_ok.to_string());
            rec.push(s.n_failed.to_string());
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Results(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Results(e.to_string()))
}

/// Render `table`. An empty table renders a header with no rows.
pub fn emit_table(table: &ResultTable, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Markdown => Ok(render_markdown(table)),
        TableFormat::Csv => render_csv(table),
    }
}

/// Parse the output of [`emit_table`] in [`TableFormat::Csv`] back into a table.
pub fn parse_table_csv(text: &str) -> Result<ResultTable> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut rows: Vec<TableRow> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| BenchError::Results(format!("table line {}: bad {what}", i + 2));
        if rec.len() != 10 {
            return Err(bad("field count"));
        }
        let scenario = rec[0].to_string();
        let method: Method = rec[1].parse().map_err(|_| bad("method"))?;
        let upsampled: bool = rec[2].parse().map_err(|_| bad("upsampled flag"))?;
        let values = if rec[3].is_empty() {
            None
        } else {
            let mut v = [0.0; 5];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = rec[3 + k].parse().map_err(|_| bad("metric"))?;
            }
            Some(v)
        };
        let summary = ModeSummary {
            values,
            n_ok: rec[8].parse().map_err(|_| bad("n_ok"))?,
            n_failed: rec[9].parse().map_err(|_| bad("n_failed"))?,
        };
        let idx = match rows.iter().position(|t| t.scenario == scenario && t.method == method) {
            Some(idx) => idx,
            None => {
                rows.push(TableRow { scenario, method, plain: None, upsampled: None });
                rows.len() - 1
            }
        };
        let slot = if upsampled { &mut rows[idx].upsampled } else { &mut rows[idx].plain };
        *slot = Some(summary);
    }
    Ok(ResultTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::Outcome;
    use threatbench_core::metrics::ConfusionCounts;

    fn metrics(acc: f64, f1: f64) -> MetricReport {
        MetricReport {
            accuracy: acc,
            precision: 90.0,
            recall: 90.0,
            f_05: f1 + 1.0,
            f_1: f1,
            f_2: f1 - 1.0,
            auc: 99.0,
            f_degenerate: false,
            counts: ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 },
        }
    }

    fn row(method: Method, seed: u64, upsampled: bool, outcome: Outcome) -> ResultRow {
        ResultRow {
            scenario: "d3".into(),
            seed,
            method,
            upsampled,
            test_sha256: String::new(),
            outcome,
            runtime_secs: 0.0,
        }
    }

    #[test]
    fn single_mode_row_has_five_plain_cells() {
        let t = ResultTable::from_rows(&[row(Method::Tfidf, 1, false, Outcome::Ok(metrics(94.59, 80.0)))]);
        let md = emit_table(&t, TableFormat::Markdown).unwrap();
        let line = md.lines().find(|l| l.starts_with("| TF-IDF")).unwrap();
        assert_eq!(line, "| TF-IDF | 94.59 | 80.00 | 81.00 | 79.00 | 99.00 |");
        assert!(!md.contains("Bracketed"));
    }

    #[test]
    fn both_modes_render_bracketed_cells_and_mean_over_seeds() {
        let rows = [
            row(Method::Lda, 1, false, Outcome::Ok(metrics(94.0, 70.0))),
            row(Method::Lda, 1, true, Outcome::Ok(metrics(94.09, 75.0))),
            row(Method::Lda, 2, false, Outcome::Ok(metrics(95.18, 72.0))),
            row(Method::Lda, 2, true, Outcome::Failed("boom".into())),
        ];
        let t = ResultTable::from_rows(&rows);
        assert_eq!(format_cell(&t.rows[0], 0), "94.59 (94.09)");
        assert_eq!(format_cell(&t.rows[0], 1), "71.00 (75.00)");
        let md = emit_table(&t, TableFormat::Markdown).unwrap();
        assert!(md.contains("| LDA [1 failed] | 94.59 (94.09) |"), "{md}");
    }

    #[test]
    fn csv_table_round_trips() {
        let rows = [
            row(Method::Lsi, 1, false, Outcome::Ok(metrics(91.234, 66.666))),
            row(Method::Lsi, 1, true, Outcome::Failed("x".into())),
            row(Method::Glove, 1, true, Outcome::Ok(metrics(88.0, 60.0))),
        ];
        let t = ResultTable::from_rows(&rows);
        let text = emit_table(&t, TableFormat::Csv).unwrap();
        let back = parse_table_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(emit_table(&back, TableFormat::Csv).unwrap(), text);
        assert_eq!(format_cell(&back.rows[1], 0), "(88.00)");
        assert_eq!(format_cell(&back.rows[0], 2), "67.67 (failed)");
    }
}
