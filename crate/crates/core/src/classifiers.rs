//! Classical classifiers over [`DocVector`]s and their soft-voting ensemble.
//!
//! - Logistic regression: full-batch gradient descent on mean binary
//!   cross-entropy plus `(l2/2)‖w‖²`.
//! - Linear SVM: subgradient descent on `Σ hinge + ‖w‖²/(2C)`, followed by
//!   Platt sigmoid calibration of the training margins.
//! - Random forest: bootstrap trees with Gini splits over `√D` random
//!   candidate features; leaves hold class frequencies.
//!
//! The ensemble averages member probabilities with equal weights.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::features::DocVector;
use crate::seed;

/// Probabilities for `[NonThreat, Threat]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    p: [f64; 2],
}

impl ProbVector {
    /// Build from the positive-class probability, clamped to `[0, 1]`.
    pub fn from_positive(p1: f64) -> Self {
        let p1 = p1.clamp(0.0, 1.0);
        ProbVector { p: [1.0 - p1, p1] }
    }

    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        let ok = p0 >= 0.0 && p1 >= 0.0 && ((p0 + p1) - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "[{p0}, {p1}] is not a probability vector"
            )));
        }
        Ok(ProbVector { p: [p0, p1] })
    }

    pub fn p0(&self) -> f64 {
        self.p[0]
    }

    pub fn p1(&self) -> f64 {
        self.p[1]
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.p
    }
}

/// Label 1 iff `p₁ >= threshold`; ties go to the positive class.
pub fn predict_label(p: &ProbVector, threshold: f64) -> Label {
    Label::from_bool(p.p1() >= threshold)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_xy(x: &[DocVector], y: &[Label]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let dim = x[0].dim();
    if let Some(bad) = x.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    Ok(dim)
}

fn require_both_classes(y: &[Label]) -> Result<()> {
    let pos = y.iter().filter(|&&l| l == Label::Threat).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass(format!(
            "{pos} positives out of {} examples",
            y.len()
        )));
    }
    Ok(())
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: x.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-3,
            epochs: 300,
            lr: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.weights.len(), x)?;
        Ok(ProbVector::from_positive(sigmoid(self.score(x))))
    }
}

/// Mean binary cross-entropy plus `(l2/2)‖w‖²`.
pub fn logistic_loss(model: &LogisticModel, x: &[DocVector], y: &[Label], l2: f64) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = model.score(&xi.values);
            // log(1 + e^z) - y z, stably.
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - if yi == Label::Threat { z } else { 0.0 }
        })
        .sum();
    data / n + 0.5 * l2 * dot(&model.weights, &model.weights)
}

/// Gradient of [`logistic_loss`]: `(∂/∂w, ∂/∂b)`.
pub fn logistic_grad(model: &LogisticModel, x: &[DocVector], y: &[Label], l2: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw: Vec<f64> = model.weights.iter().map(|w| l2 * w).collect();
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let r = (sigmoid(model.score(&xi.values)) - f64::from(yi == Label::Threat)) / n;
        gb += r;
        for (g, v) in gw.iter_mut().zip(&xi.values) {
            *g += r * v;
        }
    }
    (gw, gb)
}

pub fn train_logistic(x: &[DocVector], y: &[Label], params: &LogisticParams) -> Result<LogisticModel> {
    train_logistic_traced(x, y, params).map(|(m, _)| m)
}

/// As [`train_logistic`], also returning the loss before every step.
pub fn train_logistic_traced(
    x: &[DocVector],
    y: &[Label],
    params: &LogisticParams,
) -> Result<(LogisticModel, Vec<f64>)> {
    let dim = check_xy(x, y)?;
    require_both_classes(y)?;
    let mut model = LogisticModel::zeros(dim);
    let mut trace = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        trace.push(logistic_loss(&model, x, y, params.l2));
        let (gw, gb) = logistic_grad(&model, x, y, params.l2);
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= params.lr * g;
        }
        model.bias -= params.lr * gb;
    }
    Ok((model, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            epochs: 300,
            lr: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub calib_a: f64,
    pub calib_b: f64,
}

impl SvmModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// `σ(a · margin + b)`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.weights.len(), x)?;
        Ok(ProbVector::from_positive(sigmoid(
            self.calib_a * self.margin(x) + self.calib_b,
        )))
    }
}

fn signed(y: Label) -> f64 {
    if y == Label::Threat {
        1.0
    } else {
        -1.0
    }
}

/// `Σ max(0, 1 - yᵢ(w·xᵢ + b)) + ‖w‖²/(2C)`.
pub fn svm_objective(w: &[f64], b: f64, x: &[DocVector], y: &[Label], c: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - signed(yi) * (dot(w, &xi.values) + b)).max(0.0))
        .sum();
    hinge + dot(w, w) / (2.0 * c)
}

pub fn hinge_loss(w: &[f64], b: f64, x: &[DocVector], y: &[Label]) -> f64 {
    svm_objective(w, b, x, y, f64::INFINITY)
}

/// A subgradient of [`svm_objective`]; exact away from margin = 1.
pub fn svm_subgradient(w: &[f64], b: f64, x: &[DocVector], y: &[Label], c: f64) -> (Vec<f64>, f64) {
    let mut gw: Vec<f64> = w.iter().map(|v| v / c).collect();
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let s = signed(yi);
        if s * (dot(w, &xi.values) + b) < 1.0 {
            gb -= s;
            for (g, v) in gw.iter_mut().zip(&xi.values) {
                *g -= s * v;
            }
        }
    }
    (gw, gb)
}

/// Fit `σ(a m + b)` to labels by Newton's method on the negative
/// log-likelihood, with Platt's smoothed targets.
pub fn platt_calibrate(margins: &[f64], y: &[Label], steps: usize) -> (f64, f64) {
    let n_pos = y.iter().filter(|&&l| l == Label::Threat).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = y
        .iter()
        .map(|&l| if l == Label::Threat { t_pos } else { t_neg })
        .collect();
    let nll = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(&m, &t)| {
                let z = a * m + b;
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - t * z
            })
            .sum()
    };
    let (mut a, mut b) = (1.0, 0.0);
    let mut f = nll(a, b);
    for _ in 0..steps {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&m, &t) in margins.iter().zip(&targets) {
            let p = sigmoid(a * m + b);
            let d = p - t;
            let w = p * (1.0 - p);
            ga += d * m;
            gb += d;
            haa += w * m * m;
            hab += w * m;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if det.abs() < 1e-300 || (ga.abs() < 1e-12 && gb.abs() < 1e-12) {
            break;
        }
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(-hab * ga + haa * gb) / det;
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < f + 1e-4 * step * (ga * da + gb * db) {
                a = na;
                b = nb;
                f = nf;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

pub fn train_svm(x: &[DocVector], y: &[Label], params: &SvmParams) -> Result<SvmModel> {
    let dim = check_xy(x, y)?;
    require_both_classes(y)?;
    if !(params.c > 0.0) {
        return Err(Error::InvalidParameter("C must be positive".into()));
    }
    let n = x.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best = (svm_objective(&w, b, x, y, params.c), w.clone(), b);
    for t in 0..params.epochs {
        let (gw, gb) = svm_subgradient(&w, b, x, y, params.c);
        let step = params.lr / ((t + 1) as f64).sqrt() / n;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        b -= step * gb;
        let obj = svm_objective(&w, b, x, y, params.c);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
    }
    let (_, w, b) = best;
    let margins: Vec<f64> = x.iter().map(|xi| dot(&w, &xi.values) + b).collect();
    let (calib_a, calib_b) = platt_calibrate(&margins, y, 100);
    Ok(SvmModel {
        weights: w,
        bias: b,
        calib_a,
        calib_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Candidate features per split; `None` means `⌈√D⌉`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            min_samples_split: 2,
            max_features: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { p: [f64; 2] },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_for(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p } => return *p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub dim: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Mean of leaf distributions over trees.
    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.dim, x)?;
        let mut acc = [0.0; 2];
        for t in &self.trees {
            let p = t.leaf_for(x);
            acc[0] += p[0];
            acc[1] += p[1];
        }
        let n = self.trees.len() as f64;
        Ok(ProbVector {
            p: [acc[0] / n, acc[1] / n],
        })
    }
}

/// Gini impurity `1 - Σ p²` of class counts.
pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

/// Best split found for a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Size-weighted Gini impurity of the two children.
    pub impurity: f64,
}

/// Best threshold on one feature for the given samples, or `None` if the
/// feature is constant there. Thresholds are midpoints between consecutive
/// distinct values.
fn best_threshold(
    x: &[DocVector],
    y: &[Label],
    samples: &[usize],
    feature: usize,
    buf: &mut Vec<(f64, u8)>,
) -> Option<(f64, f64)> {
    buf.clear();
    buf.extend(samples.iter().map(|&i| (x[i].values[feature], y[i] as u8)));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    if buf[0].0 == buf[buf.len() - 1].0 {
        return None;
    }
    let n = buf.len();
    let total = buf.iter().fold([0usize; 2], |mut c, &(_, l)| {
        c[l as usize] += 1;
        c
    });
    let mut left = [0usize; 2];
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        left[buf[i].1 as usize] += 1;
        if buf[i].0 == buf[i + 1].0 {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let nl = (i + 1) as f64;
        let nr = (n - i - 1) as f64;
        let imp = (nl * gini(left) + nr * gini(right)) / n as f64;
        if best.is_none_or(|(b, _)| imp < b) {
            best = Some((imp, 0.5 * (buf[i].0 + buf[i + 1].0)));
        }
    }
    best
}

/// Search candidate features in order; if none of them can split, keep
/// drawing from the remaining features. Ties keep the earlier candidate.
pub fn find_split(
    x: &[DocVector],
    y: &[Label],
    samples: &[usize],
    feature_order: &[usize],
    n_candidates: usize,
) -> Option<SplitChoice> {
    let mut buf = Vec::with_capacity(samples.len());
    let mut best: Option<SplitChoice> = None;
    for (tried, &f) in feature_order.iter().enumerate() {
        if tried >= n_candidates && best.is_some() {
            break;
        }
        if let Some((imp, thr)) = best_threshold(x, y, samples, f, &mut buf) {
            if best.is_none_or(|b| imp < b.impurity) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: thr,
                    impurity: imp,
                });
            }
        }
    }
    best
}

fn class_counts(y: &[Label], samples: &[usize]) -> [usize; 2] {
    samples.iter().fold([0, 0], |mut c, &i| {
        c[y[i].index()] += 1;
        c
    })
}

fn leaf(counts: [usize; 2]) -> Node {
    let n = (counts[0] + counts[1]) as f64;
    Node::Leaf {
        p: [counts[0] as f64 / n, counts[1] as f64 / n],
    }
}

fn build_tree(
    x: &[DocVector],
    y: &[Label],
    samples: Vec<usize>,
    params: &ForestParams,
    n_candidates: usize,
    rng: &mut seed::Rng,
) -> Tree {
    let dim = x[0].dim();
    let mut nodes = vec![Node::Leaf { p: [0.5, 0.5] }];
    let mut stack = vec![(0usize, samples, 0usize)];
    let mut features: Vec<usize> = (0..dim).collect();
    while let Some((slot, samples, depth)) = stack.pop() {
        let counts = class_counts(y, &samples);
        let impure = counts[0] > 0 && counts[1] > 0;
        if !impure || depth >= params.max_depth || samples.len() < params.min_samples_split {
            nodes[slot] = leaf(counts);
            continue;
        }
        features.shuffle(rng);
        let Some(split) = find_split(x, y, &samples, &features, n_candidates) else {
            nodes[slot] = leaf(counts);
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| x[i].values[split.feature] <= split.threshold);
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { p: [0.5, 0.5] });
        nodes.push(Node::Leaf { p: [0.5, 0.5] });
        nodes[slot] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: l as u32,
            right: r as u32,
        };
        stack.push((r, right, depth + 1));
        stack.push((l, left, depth + 1));
    }
    Tree { nodes }
}

/// Each tree sees a bootstrap sample and its own RNG stream derived from
/// `(seed, tree index)`.
pub fn train_forest(x: &[DocVector], y: &[Label], params: &ForestParams) -> Result<ForestModel> {
    let dim = check_xy(x, y)?;
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be >= 1".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("features must have positive dimension".into()));
    }
    let n_candidates = params
        .max_features
        .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
        .clamp(1, dim);
    let n = x.len();
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = seed::rng_for(params.seed, &[t as u64]);
            let samples: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            build_tree(x, y, samples, params, n_candidates, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        dim,
        max_depth: params.max_depth,
        seed: params.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Member {
    Logistic(LogisticModel),
    Svm(SvmModel),
    Forest(ForestModel),
}

impl Member {
    pub fn name(&self) -> &'static str {
        match self {
            Member::Logistic(_) => "logistic",
            Member::Svm(_) => "svm",
            Member::Forest(_) => "forest",
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        match self {
            Member::Logistic(m) => m.predict_proba(x),
            Member::Svm(m) => m.predict_proba(x),
            Member::Forest(m) => m.predict_proba(x),
        }
    }
}

/// Unweighted mean of member probability vectors.
pub fn soft_vote(probs: &[ProbVector]) -> Result<ProbVector> {
    if probs.is_empty() {
        return Err(Error::Empty("soft voting needs at least one member".into()));
    }
    let n = probs.len() as f64;
    let p1 = probs.iter().map(ProbVector::p1).sum::<f64>() / n;
    let p0 = probs.iter().map(ProbVector::p0).sum::<f64>() / n;
    Ok(ProbVector { p: [p0, p1] })
}

pub fn ensemble_predict_proba(members: &[Member], x: &[f64]) -> Result<ProbVector> {
    let probs = members
        .iter()
        .map(|m| m.predict_proba(x))
        .collect::<Result<Vec<_>>>()?;
    soft_vote(&probs)
}

/// Per-feature z-scoring fitted on training data. Features with zero
/// variance are only centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[DocVector]) -> Result<Self> {
        let first = x.first().ok_or_else(|| Error::Empty("no vectors".into()))?;
        let dim = first.dim();
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in x {
            check_dim(dim, &v.values)?;
            for (m, a) in mean.iter_mut().zip(&v.values) {
                *m += a / n;
            }
        }
        let mut var = vec![0.0; dim];
        for v in x {
            for ((s, a), m) in var.iter_mut().zip(&v.values).zip(&mean) {
                *s += (a - m) * (a - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|s| if s > 1e-24 { s.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, v: &DocVector) -> Result<DocVector> {
        check_dim(self.mean.len(), &v.values)?;
        let values = v
            .values
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((a, m), s)| (a - m) / s)
            .collect();
        Ok(DocVector::new(values, v.producer))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EnsembleParams {
    pub logistic: LogisticParams,
    pub svm: SvmParams,
    pub forest: ForestParams,
}

/// Standardizer followed by logistic regression, SVM and random forest,
/// combined by soft voting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub scaler: Standardizer,
    pub members: Vec<Member>,
}

impl Ensemble {
    pub fn fit(x: &[DocVector], y: &[Label], params: &EnsembleParams) -> Result<Self> {
        check_xy(x, y)?;
        require_both_classes(y)?;
        let scaler = Standardizer::fit(x)?;
        let xs = x.iter().map(|v| scaler.apply(v)).collect::<Result<Vec<_>>>()?;
        let members = vec![
            Member::Logistic(train_logistic(&xs, y, &params.logistic)?),
            Member::Svm(train_svm(&xs, y, &params.svm)?),
            Member::Forest(train_forest(&xs, y, &params.forest)?),
        ];
        Ok(Ensemble { scaler, members })
    }

    pub fn predict_proba(&self, x: &DocVector) -> Result<ProbVector> {
        let xs = self.scaler.apply(x)?;
        ensemble_predict_proba(&self.members, &xs.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Producer;

    fn dv(v: &[f64]) -> DocVector {
        DocVector::new(v.to_vec(), Producer::Tfidf)
    }

    #[test]
    fn zero_logistic_is_half() {
        let m = LogisticModel::zeros(3);
        assert_eq!(m.predict_proba(&[1.0, -4.0, 2.0]).unwrap().p1(), 0.5);
        assert!(m.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn separable_1d_logistic() {
        let x = vec![dv(&[-1.0]), dv(&[1.0])];
        let y = vec![Label::NonThreat, Label::Threat];
        let m = train_logistic(&x, &y, &LogisticParams::default()).unwrap();
        assert_eq!(predict_label(&m.predict_proba(&[-1.0]).unwrap(), 0.5), Label::NonThreat);
        assert_eq!(predict_label(&m.predict_proba(&[1.0]).unwrap(), 0.5), Label::Threat);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![dv(&[1.0]), dv(&[2.0])];
        let y = vec![Label::Threat, Label::Threat];
        assert!(matches!(train_logistic(&x, &y, &LogisticParams::default()), Err(Error::SingleClass(_))));
        assert!(matches!(train_svm(&x, &y, &SvmParams::default()), Err(Error::SingleClass(_))));
    }

    #[test]
    fn svm_midpoint_and_separable_pair() {
        let m = SvmModel {
            weights: vec![0.0],
            bias: 0.0,
            calib_a: 1.0,
            calib_b: 0.0,
        };
        assert_eq!(m.predict_proba(&[3.0]).unwrap().p1(), 0.5);

        let x = vec![dv(&[-2.0]), dv(&[2.0])];
        let y = vec![Label::NonThreat, Label::Threat];
        let m = train_svm(&x, &y, &SvmParams { c: 1e3, ..Default::default() }).unwrap();
        assert_eq!(hinge_loss(&m.weights, m.bias, &x, &y), 0.0);
        assert!(m.predict_proba(&[2.0]).unwrap().p1() > 0.5);
        assert!(m.predict_proba(&[-2.0]).unwrap().p1() < 0.5);
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini([5, 5]), 0.5);
        assert_eq!(gini([7, 0]), 0.0);
    }

    #[test]
    fn pure_data_gives_pure_leaves() {
        let x: Vec<DocVector> = (0..10).map(|i| dv(&[i as f64, (i * 3 % 7) as f64])).collect();
        let y = vec![Label::Threat; 10];
        let f = train_forest(&x, &y, &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
        for t in &f.trees {
            assert_eq!(t.nodes.len(), 1);
            assert_eq!(t.nodes[0], Node::Leaf { p: [0.0, 1.0] });
        }
    }

    #[test]
    fn forest_averages_leaves() {
        let f = ForestModel {
            trees: vec![
                Tree { nodes: vec![Node::Leaf { p: [1.0, 0.0] }] },
                Tree { nodes: vec![Node::Leaf { p: [0.0, 1.0] }] },
            ],
            dim: 1,
            max_depth: 1,
            seed: 0,
        };
        assert_eq!(f.predict_proba(&[0.0]).unwrap().as_array(), [0.5, 0.5]);
        assert!(train_forest(&[], &[], &ForestParams::default()).is_err());
    }

    #[test]
    fn xor_forest_fits() {
        let x = vec![dv(&[0.0, 0.0]), dv(&[1.0, 1.0]), dv(&[0.0, 1.0]), dv(&[1.0, 0.0])];
        let y = vec![Label::NonThreat, Label::NonThreat, Label::Threat, Label::Threat];
        let f = train_forest(&x, &y, &ForestParams { n_trees: 50, max_depth: 3, ..Default::default() }).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(predict_label(&f.predict_proba(&xi.values).unwrap(), 0.5), yi);
        }
    }

    #[test]
    fn soft_vote_mean() {
        let p = [0.9, 0.6, 0.3].map(ProbVector::from_positive);
        assert!((soft_vote(&p).unwrap().p1() - 0.6).abs() < 1e-12);
        assert!(soft_vote(&[]).is_err());
        let same = [ProbVector::from_positive(0.37); 3];
        assert!((soft_vote(&same).unwrap().p1() - 0.37).abs() < 1e-15);
    }

    #[test]
    fn threshold_ties_go_positive() {
        assert_eq!(predict_label(&ProbVector::from_positive(0.5), 0.5), Label::Threat);
        assert_eq!(predict_label(&ProbVector::from_positive(0.49), 0.5), Label::NonThreat);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(0.2, 0.8).is_ok());
        assert!(ProbVector::new(0.5, 0.6).is_err());
        assert!(ProbVector::new(-0.1, 1.1).is_err());
    }

    #[test]
    fn standardizer_centres_and_scales() {
        let x = vec![dv(&[1.0, 5.0]), dv(&[3.0, 5.0])];
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.apply(&x[0]).unwrap().values, vec![-1.0, 0.0]);
        assert_eq!(s.apply(&x[1]).unwrap().values, vec![1.0, 0.0]);
    }
}
