//! Binary classification metrics, reported as percentages in `[0, 100]`.
//!
//! The positive class is [`Label::Threat`].

use serde::{Deserialize, Serialize};

use crate::classifiers::{predict_label, ProbVector};
use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `tp / (tp + fp)`, or `None` when nothing was predicted positive.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `tp / (tp + fn)`, or `None` when there are no positives.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionCounts> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: preds.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::Threat, Label::Threat) => c.tp += 1,
            (Label::Threat, Label::NonThreat) => c.fp += 1,
            (Label::NonThreat, Label::NonThreat) => c.tn += 1,
            (Label::NonThreat, Label::Threat) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// An F-score together with whether it fell back to 0 because precision
/// or recall was undefined or both were zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub value: f64,
    pub degenerate: bool,
}

/// `(1 + β²) P R / (β² P + R) × 100`.
pub fn f_beta(c: &ConfusionCounts, beta: f64) -> Result<FScore> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let degenerate = FScore {
        value: 0.0,
        degenerate: true,
    };
    let (Some(p), Some(r)) = (c.precision(), c.recall()) else {
        return Ok(degenerate);
    };
    if c.tp == 0 {
        return Ok(degenerate);
    }
    let b2 = beta * beta;
    Ok(FScore {
        value: 100.0 * (1.0 + b2) * p * r / (b2 * p + r),
        degenerate: false,
    })
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    Ok(100.0 * (c.tp + c.tn) as f64 / c.total() as f64)
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs in which the
/// positive scores higher, counting ties as half. Computed from midranks.
pub fn roc_auc(scores: &[f64], truth: &[Label]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidParameter(format!("score {bad} is not a number")));
    }
    let n_pos = truth.iter().filter(|&&l| l == Label::Threat).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!(
            "AUC needs both classes; got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j]
            .iter()
            .filter(|&&k| truth[k] == Label::Threat)
            .count();
        pos_rank_sum += midrank * pos_in_group as f64;
        i = j;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - np * (np + 1.0) / 2.0;
    Ok(100.0 * u / (np * nn))
}

/// One evaluated row: percentages plus the raw confusion counts.
///
/// Field order here is the serialized order for both CSV and JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_05: f64,
    pub f_1: f64,
    pub f_2: f64,
    pub auc: f64,
    /// True if any F-score used the zero fallback.
    pub f_degenerate: bool,
    pub counts: ConfusionCounts,
}

/// Round to 2 decimals, the precision used in every serialized output.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "accuracy,precision,recall,f_05,f_1,f_2,auc,f_degenerate,tp,fp,tn,fn";

    /// The same report with every percentage rounded to 2 decimals.
    pub fn rounded(&self) -> MetricReport {
        MetricReport {
            accuracy: round2(self.accuracy),
            precision: round2(self.precision),
            recall: round2(self.recall),
            f_05: round2(self.f_05),
            f_1: round2(self.f_1),
            f_2: round2(self.f_2),
            auc: round2(self.auc),
            ..self.clone()
        }
    }

    /// Comma-separated values matching [`Self::CSV_HEADER`].
    pub fn to_csv_row(&self) -> String {
        let c = &self.counts;
        format!(
            "{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{},{},{},{},{}",
            self.accuracy,
            self.precision,
            self.recall,
            self.f_05,
            self.f_1,
            self.f_2,
            self.auc,
            self.f_degenerate,
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )
    }

    pub fn from_csv_fields(fields: &[&str]) -> Result<MetricReport> {
        if fields.len() != 12 {
            return Err(Error::Parse(format!(
                "metric row needs 12 fields, got {}",
                fields.len()
            )));
        }
        let pct = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("field {i} ({:?}): {e}", fields[i])))
        };
        let count = |i: usize| -> Result<usize> {
            fields[i]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("field {i} ({:?}): {e}", fields[i])))
        };
        let flag = fields[7]
            .trim()
            .parse::<bool>()
            .map_err(|e| Error::Parse(format!("field 7 ({:?}): {e}", fields[7])))?;
        Ok(MetricReport {
            accuracy: pct(0)?,
            precision: pct(1)?,
            recall: pct(2)?,
            f_05: pct(3)?,
            f_1: pct(4)?,
            f_2: pct(5)?,
            auc: pct(6)?,
            f_degenerate: flag,
            counts: ConfusionCounts {
                tp: count(8)?,
                fp: count(9)?,
                tn: count(10)?,
                fn_: count(11)?,
            },
        })
    }

    /// JSON object of the rounded report, in field order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.rounded()).expect("metric report always serializes")
    }
}

/// Evaluate positive-class probabilities: labels by `p₁ >= threshold`,
/// AUC from the raw `p₁` scores.
pub fn report(probs: &[ProbVector], truth: &[Label], threshold: f64) -> Result<MetricReport> {
    let preds: Vec<Label> = probs.iter().map(|p| predict_label(p, threshold)).collect();
    let scores: Vec<f64> = probs.iter().map(ProbVector::p1).collect();
    report_from(&preds, &scores, truth)
}

/// As [`report`], from precomputed hard labels and ranking scores.
pub fn report_from(preds: &[Label], scores: &[f64], truth: &[Label]) -> Result<MetricReport> {
    let counts = confusion(preds, truth)?;
    let f05 = f_beta(&counts, 0.5)?;
    let f1 = f_beta(&counts, 1.0)?;
    let f2 = f_beta(&counts, 2.0)?;
    Ok(MetricReport {
        accuracy: accuracy(&counts)?,
        precision: 100.0 * counts.precision().unwrap_or(0.0),
        recall: 100.0 * counts.recall().unwrap_or(0.0),
        f_05: f05.value,
        f_1: f1.value,
        f_2: f2.value,
        auc: roc_auc(scores, truth)?,
        f_degenerate: f05.degenerate || f1.degenerate || f2.degenerate,
        counts,
    })
}
