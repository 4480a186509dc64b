//! Acceptance checks. Prints one PASS/FAIL line per criterion and a
//! summary. With `THREATBENCH_ACCEPTANCE_STRICT` set, any FAIL makes the
//! target exit non-zero. Every tolerance is a named constant.

// Checks are written as `!(err <= tol)` so that NaN counts as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use threatbench_bench::config::{ExperimentConfig, Method};
use threatbench_bench::results::ResultRow;
use threatbench_bench::runner::{run_bench, sha256_hex};
use threatbench_core::classifiers::{logistic_grad, logistic_loss, LogisticModel};
use threatbench_core::corpus::{stratified_split, to_csv_bytes, upsample_minority, Document, Label, LabeledDataset};
use threatbench_core::embeddings::{cbow_grad, cbow_loss, glove_entry_grad, glove_entry_loss, skipgram_grad, skipgram_loss};
use threatbench_core::features::{tfidf_fit, DocVector, Producer};
use threatbench_core::linalg::Mat;
use threatbench_core::metrics::{f_beta, roc_auc, ConfusionCounts};
use threatbench_core::tokenizer::TokenSequence;
use threatbench_core::topics::{randomized_svd, LdaParams, LdaSampler, SvdParams};
use threatbench_neural::attention::{attention, AttnMask, AttnShape};
use threatbench_neural::config::TransformerConfig;
use threatbench_neural::loss::weighted_cross_entropy;
use threatbench_neural::model::{attach_adapters, forward_ids, init_base, BaseWeights, LoraAdapter, LoraConfig, Target};
use threatbench_neural::optim::AdamW;
use threatbench_neural::rope::rope_apply;
use threatbench_neural::train::{batch_loss_and_grads, finetune, TrainConfig};

const ZERO_START_INPUTS: usize = 100;
const ZERO_START_BUDGET: Duration = Duration::from_secs(10);
const MERGE_INPUTS: usize = 100;
const MERGE_TOL: f32 = 1e-5;
const MERGE_BUDGET: Duration = Duration::from_secs(30);
const LN2_TOL: f64 = 1e-6;
const LOSS_HEAD_FD_TOL: f64 = 1e-6;
const NETWORK_FD_REL_TOL: f64 = 1e-3;
const F_TOL: f64 = 0.01;
const RANDOM_TABLES: usize = 1000;
const AUC_TOL: f64 = 1e-9;
const AUC_SETS: usize = 1000;
const SWA_TOL: f64 = 1e-9;
const ROPE_TOL: f64 = 1e-6;
const SVD_TOL: f64 = 1e-6;
const LDA_TOL: f64 = 1e-12;
const CLASSICAL_FD_REL_TOL: f64 = 1e-4;
const UPSAMPLE_TRIALS: usize = 50;
const E2E_TRANSFORMER_F1: f64 = 90.0;
const E2E_TRANSFORMER_AUC: f64 = 95.0;
const E2E_CLASSICAL_F1: f64 = 70.0;
const E2E_MIN_IMPROVED: usize = 4;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);

const STRICT_ENV: &str = "THREATBENCH_ACCEPTANCE_STRICT";

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn gaussian<T: From<f32>>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            T::from(z)
        })
        .collect()
}

// ---------------------------------------------------------------- neural

fn small_config() -> TransformerConfig {
    TransformerConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        n_kv_heads: 2,
        d_ff: 64,
        swa_window: Some(4),
        max_len: 24,
        vocab_size: 300,
        ..Default::default()
    }
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = rng.random_range(1..=max_len);
    let mut ids = vec![2u32];
    ids.extend((1..len).map(|_| rng.random_range(3..vocab as u32)));
    ids
}

fn lora_zero_start() -> Check {
    let start = Instant::now();
    let cfg = small_config();
    let base = init_base(&cfg, 1).unwrap();
    let lora = LoraConfig { targets: Target::ALL.to_vec(), ..Default::default() };
    let adapters = attach_adapters(&base, &lora, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identical = 0;
    for _ in 0..ZERO_START_INPUTS {
        let ids = random_ids(&mut rng, cfg.vocab_size, cfg.max_len);
        let a = forward_ids(&base, &[], &ids).unwrap();
        let b = forward_ids(&base, &adapters, &ids).unwrap();
        if a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits())) {
            identical += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(identical == ZERO_START_INPUTS, "{identical}/{ZERO_START_INPUTS} bitwise identical");
    ensure!(elapsed < ZERO_START_BUDGET, "took {elapsed:?}");
    Ok(format!("{identical}/{ZERO_START_INPUTS} bitwise identical in {:.2} s", elapsed.as_secs_f64()))
}

fn merge_equivalence() -> Check {
    let start = Instant::now();
    let cfg = small_config();
    let base = init_base(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train: Vec<TokenSequence> = (0..48)
        .map(|_| {
            let mut ids = random_ids(&mut rng, cfg.vocab_size, cfg.max_len);
            let attn_len = ids.len();
            ids.resize(cfg.max_len, 0);
            TokenSequence { ids, attn_len }
        })
        .collect();
    let labels: Vec<usize> = (0..train.len()).map(|i| i % 2).collect();
    let tc = TrainConfig {
        lora: LoraConfig { targets: Target::ALL.to_vec(), ..Default::default() },
        optimizer: AdamW { lr: 1e-2, ..Default::default() },
        batch_size: 8,
        epochs: 3,
        seed: 6,
        ..Default::default()
    };
    let tuned = finetune(&base, &tc, &train, &labels).unwrap();
    let moved = tuned.adapters.iter().all(|a| a.a.data.iter().any(|&v| v != 0.0));
    ensure!(moved, "training left some adapters at zero");
    let merged = tuned.merged().unwrap();
    let mut worst = 0.0f32;
    for _ in 0..MERGE_INPUTS {
        let ids = random_ids(&mut rng, cfg.vocab_size, cfg.max_len);
        let a = forward_ids(&tuned.base, &tuned.adapters, &ids).unwrap();
        let m = forward_ids(&merged, &[], &ids).unwrap();
        worst = a.iter().zip(&m).map(|(x, y)| (x - y).abs()).fold(worst, f32::max);
    }
    let elapsed = start.elapsed();
    ensure!(worst <= MERGE_TOL, "max |Δlogit| {worst:e} > {MERGE_TOL:e}");
    ensure!(elapsed < MERGE_BUDGET, "took {elapsed:?}");
    Ok(format!("max |Δlogit| {worst:.2e} over {MERGE_INPUTS} inputs in {:.2} s", elapsed.as_secs_f64()))
}

fn trainables(base: &BaseWeights, adapters: &[LoraAdapter]) -> Vec<f32> {
    let mut out = Vec::new();
    for ad in adapters {
        out.extend_from_slice(&ad.a.data);
        out.extend_from_slice(&ad.b.data);
    }
    out.extend_from_slice(&base.head.data);
    out.extend_from_slice(&base.head_bias);
    out
}

fn set_trainables(base: &mut BaseWeights, adapters: &mut [LoraAdapter], flat: &[f32]) {
    let mut it = flat.iter().copied();
    for ad in adapters.iter_mut() {
        ad.a.data.iter_mut().chain(ad.b.data.iter_mut()).for_each(|v| *v = it.next().unwrap());
    }
    base.head.data.iter_mut().chain(base.head_bias.iter_mut()).for_each(|v| *v = it.next().unwrap());
}

fn loss_correctness() -> Check {
    let (l, _) = weighted_cross_entropy(&[0.0, 0.0, 0.0, 0.0], 2, &[0, 1], &[1.0, 1.0]).unwrap();
    let ln2_err = (l - std::f64::consts::LN_2).abs();
    ensure!(ln2_err <= LN2_TOL, "uniform logits: loss {l}, |loss - ln 2| = {ln2_err:e}");

    // Loss gradient with respect to the logits, against central differences.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut head_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..6);
        let z: Vec<f64> = gaussian(&mut rng, 2 * n);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let w = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
        let (_, g) = weighted_cross_entropy(&z, 2, &y, &w).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (weighted_cross_entropy(&zp, 2, &y, &w).unwrap().0 - weighted_cross_entropy(&zm, 2, &y, &w).unwrap().0)
                / (2.0 * h);
            head_worst = head_worst.max((fd - g[i]).abs());
        }
    }
    ensure!(head_worst <= LOSS_HEAD_FD_TOL, "loss-head gradient error {head_worst:e}");

    // Directional derivative through the 2-layer network in f32.
    let cfg = small_config();
    let base = init_base(&cfg, 8).unwrap();
    let lora = LoraConfig { targets: Target::ALL.to_vec(), rank: 4, ..Default::default() };
    let mut adapters = attach_adapters(&base, &lora, 8).unwrap();
    for ad in adapters.iter_mut() {
        for v in ad.a.data.iter_mut() {
            let z: f32 = StandardNormal.sample(&mut rng);
            *v = 0.1 * z;
        }
    }
    let batch: Vec<Vec<u32>> = (0..4).map(|_| random_ids(&mut rng, cfg.vocab_size, 12)).collect();
    let refs: Vec<&[u32]> = batch.iter().map(Vec::as_slice).collect();
    let labels = [0usize, 1, 1, 0];
    let weights = [1.0, 3.0];
    let (_, grads) = batch_loss_and_grads(&base, &adapters, &refs, &labels, &weights).unwrap();
    let mut flat_g = Vec::new();
    for g in &grads.adapters {
        flat_g.extend_from_slice(&g.a.data);
        flat_g.extend_from_slice(&g.b.data);
    }
    flat_g.extend_from_slice(&grads.head.data);
    flat_g.extend_from_slice(&grads.head_bias);
    let theta = trainables(&base, &adapters);
    let mut dir: Vec<f32> = gaussian(&mut rng, theta.len());
    let norm = dir.iter().map(|x| x * x).sum::<f32>().sqrt();
    dir.iter_mut().for_each(|x| *x /= norm);
    let analytic: f64 = flat_g.iter().zip(&dir).map(|(&g, &d)| f64::from(g) * f64::from(d)).sum();
    let eps = 1e-2f32;
    let eval = |sign: f32| {
        let (mut b, mut a) = (base.clone(), adapters.clone());
        let moved: Vec<f32> = theta.iter().zip(&dir).map(|(t, d)| t + sign * eps * d).collect();
        set_trainables(&mut b, &mut a, &moved);
        batch_loss_and_grads(&b, &a, &refs, &labels, &weights).unwrap().0
    };
    let numeric = (eval(1.0) - eval(-1.0)) / (2.0 * f64::from(eps));
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
    ensure!(rel <= NETWORK_FD_REL_TOL, "network directional derivative: analytic {analytic}, numeric {numeric}, rel {rel:e}");
    Ok(format!("|loss - ln 2| {ln2_err:.1e}; loss-head FD error {head_worst:.1e}; network FD rel error {rel:.1e}"))
}

fn naive_mha(q: &[f64], k: &[f64], v: &[f64], t: usize, heads: usize, dh: usize) -> Vec<f64> {
    let w = heads * dh;
    let mut out = vec![0.0; t * w];
    for i in 0..t {
        for h in 0..heads {
            let s: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|c| q[i * w + h * dh + c] * k[j * w + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..t {
                for c in 0..dh {
                    out[i * w + h * dh + c] += e[j] / z * v[j * w + h * dh + c];
                }
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn attention_degeneracies() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let full = AttnMask { window: None, causal: false };

    // GQA with n_kv = n_heads against per-head multi-head attention.
    let (t, heads, dh) = (10, 4, 8);
    let w = heads * dh;
    let q: Vec<f32> = gaussian(&mut rng, t * w);
    let k: Vec<f32> = gaussian(&mut rng, t * w);
    let v: Vec<f32> = gaussian(&mut rng, t * w);
    let pos: Vec<usize> = (0..t).collect();
    let gqa = attention(AttnShape { n_heads: heads, n_kv_heads: heads, head_dim: dh }, full, &q, &pos, &k, &v, t).unwrap();
    let one = AttnShape { n_heads: 1, n_kv_heads: 1, head_dim: dh };
    for h in 0..heads {
        let slice = |x: &[f32]| -> Vec<f32> { (0..t).flat_map(|i| x[i * w + h * dh..i * w + (h + 1) * dh].to_vec()).collect() };
        let out = attention(one, full, &slice(&q), &pos, &slice(&k), &slice(&v), t).unwrap();
        ensure!(out.context == slice(&gqa.context), "head {h} differs from single-head attention");
    }
    let q64: Vec<f64> = q.iter().map(|&x| f64::from(x)).collect();
    let k64: Vec<f64> = k.iter().map(|&x| f64::from(x)).collect();
    let v64: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
    let got = attention(AttnShape { n_heads: heads, n_kv_heads: heads, head_dim: dh }, full, &q64, &pos, &k64, &v64, t).unwrap();
    let oracle_err = got.context.iter().zip(naive_mha(&q64, &k64, &v64, t, heads, dh)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(oracle_err <= 1e-12, "GQA(n_kv = n_heads) vs naive MHA: {oracle_err:e}");

    // Sliding window at least as long as the sequence.
    let shape = AttnShape { n_heads: 4, n_kv_heads: 2, head_dim: 8 };
    let mut swa_worst = 0.0f64;
    for t in [1usize, 7, 16] {
        let q: Vec<f64> = gaussian(&mut rng, t * 32);
        let k: Vec<f64> = gaussian(&mut rng, t * 16);
        let v: Vec<f64> = gaussian(&mut rng, t * 16);
        let pos: Vec<usize> = (0..t).collect();
        let reference = attention(shape, full, &q, &pos, &k, &v, t).unwrap();
        for win in [t, t + 3, 1000] {
            let swa = attention(shape, AttnMask { window: Some(win), causal: false }, &q, &pos, &k, &v, t).unwrap();
            swa_worst = reference.context.iter().zip(&swa.context).map(|(a, b)| (a - b).abs()).fold(swa_worst, f64::max);
        }
    }
    ensure!(swa_worst <= SWA_TOL, "SWA(W >= len) vs full: {swa_worst:e}");

    // RoPE: <R_m q, R_n k> depends only on m - n.
    let dh = 16;
    let mut rope_worst = 0.0f64;
    for _ in 0..50 {
        let q: Vec<f64> = gaussian(&mut rng, dh);
        let k: Vec<f64> = gaussian(&mut rng, dh);
        let rot = |x: &[f64], p: usize| {
            let mut y = x.to_vec();
            rope_apply(&mut y, &[p], 1, dh, 10_000.0).unwrap();
            y
        };
        let (m, n) = (rng.random_range(0..64), rng.random_range(0..64));
        let shift = rng.random_range(1..512);
        let a = dot(&rot(&q, m), &rot(&k, n));
        let b = dot(&rot(&q, m + shift), &rot(&k, n + shift));
        rope_worst = rope_worst.max((a - b).abs());
    }
    ensure!(rope_worst <= ROPE_TOL, "RoPE offset invariance: {rope_worst:e}");
    Ok(format!("GQA = MHA bitwise; SWA error {swa_worst:.1e}; RoPE offset error {rope_worst:.1e}"))
}

// ---------------------------------------------------------------- metrics

fn f_beta_correctness() -> Check {
    let c = ConfusionCounts { tp: 1, fp: 0, tn: 0, fn_: 1 };
    for (beta, want) in [(1.0, 66.67), (0.5, 83.33), (2.0, 55.56)] {
        let got = f_beta(&c, beta).unwrap().value;
        ensure!((got - want).abs() <= F_TOL, "F_{beta} = {got}, expected {want}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    for _ in 0..RANDOM_TABLES {
        let c = ConfusionCounts {
            tp: rng.random_range(0..100),
            fp: rng.random_range(0..100),
            tn: rng.random_range(0..100),
            fn_: rng.random_range(0..100),
        };
        let (Some(p), Some(r)) = (c.precision(), c.recall()) else { continue };
        let [f05, f1, f2] = [0.5, 1.0, 2.0].map(|b| f_beta(&c, b).unwrap().value);
        let slack = 1e-9;
        if p > r {
            ensure!(f05 + slack >= f1 && f1 + slack >= f2, "{c:?}: P > R but {f05}, {f1}, {f2}");
        } else if r > p {
            ensure!(f2 + slack >= f1 && f1 + slack >= f05, "{c:?}: R > P but {f05}, {f1}, {f2}");
        }
        checked += 1;
    }
    Ok(format!("F1/F0.5/F2 at P=1, R=0.5 within {F_TOL}; ordering holds on {checked} random tables"))
}

/// ROC area by sweeping thresholds and applying the trapezoid rule.
fn trapezoid_auc(scores: &[f64], truth: &[Label]) -> f64 {
    let pos = truth.iter().filter(|&&l| l == Label::Threat).count() as f64;
    let neg = truth.len() as f64 - pos;
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in th {
        let tp = scores.iter().zip(truth).filter(|(s, l)| **s >= t && **l == Label::Threat).count() as f64;
        let fp = scores.iter().zip(truth).filter(|(s, l)| **s >= t && **l == Label::NonThreat).count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    100.0 * pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum::<f64>()
}

fn auc_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut with_ties = 0;
    for trial in 0..AUC_SETS {
        let n = rng.random_range(2..80);
        let mut truth: Vec<Label> = (0..n).map(|_| if rng.random::<bool>() { Label::Threat } else { Label::NonThreat }).collect();
        truth[0] = Label::Threat;
        truth[1] = Label::NonThreat;
        let levels = if trial % 2 == 0 { 4 } else { 10_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let distinct: HashSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if distinct.len() < n {
            with_ties += 1;
        }
        let mw = roc_auc(&scores, &truth).unwrap();
        worst = worst.max((mw - trapezoid_auc(&scores, &truth)).abs());
    }
    ensure!(worst <= AUC_TOL, "max difference {worst:e}");
    Ok(format!("max difference {worst:.1e} over {AUC_SETS} sets ({with_ties} with tied scores)"))
}

// ---------------------------------------------------------------- classical

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn fd_grad(theta: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let plus = f(&t);
            t[i] = orig - h;
            let minus = f(&t);
            t[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

fn classical_oracles() -> Check {
    // TF-IDF on three documents, by hand: df a=1, b=2, c=2, d=1, N=3.
    let docs = ["a b a", "b c", "c c d"];
    let m = tfidf_fit(docs).unwrap();
    let idf1 = (4.0f64 / 2.0).ln() + 1.0;
    let idf2 = (4.0f64 / 3.0).ln() + 1.0;
    let raw: [&[(&str, f64)]; 3] = [
        &[("a", 2.0 * idf1), ("b", idf2)],
        &[("b", idf2), ("c", idf2)],
        &[("c", 2.0 * idf2), ("d", idf1)],
    ];
    for (doc, terms) in docs.iter().zip(raw) {
        let norm = terms.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        let mut want = vec![0.0; m.dim()];
        for &(t, v) in terms {
            want[m.column(t).unwrap()] = v / norm;
        }
        ensure!(m.transform_text(doc).values == want, "TF-IDF of {doc:?} differs from hand computation");
    }

    // Truncated SVD against nalgebra's dense SVD.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut svd_worst = 0.0f64;
    for trial in 0..10u64 {
        let data: Vec<f64> = gaussian(&mut rng, 20 * 15);
        let a = Mat::from_vec(20, 15, data.clone());
        let mut oracle: Vec<f64> = DMatrix::from_row_slice(20, 15, &data).svd(false, false).singular_values.iter().copied().collect();
        oracle.sort_by(|x, y| y.total_cmp(x));
        for k in [1, 3, 5, 10] {
            let svd = randomized_svd(&a, k, &SvdParams { seed: trial, ..Default::default() }).unwrap();
            svd_worst = svd.s.iter().zip(&oracle).map(|(s, o)| (s - o).abs()).fold(svd_worst, f64::max);
        }
    }
    ensure!(svd_worst <= SVD_TOL, "top-k singular values off by {svd_worst:e}");

    // LDA one-site conditional. doc 0 = [w0, w1], z = [0, 1];
    // doc 1 = [w1, w1], z = [1, 0]; site (0, 0) removed leaves
    // n_d0 = [0, 1], n_{t,w0} = [0, 0], n_t = [1, 2].
    let (alpha, beta, vb) = (0.5, 0.1, 0.2);
    let s = LdaSampler::with_assignments(
        vec![vec![0, 1], vec![1, 1]],
        vec![vec![0, 1], vec![1, 0]],
        2,
        &LdaParams { k: 2, alpha, beta, iters: 1, seed: 0 },
    )
    .unwrap();
    let u = [alpha * beta / (1.0 + vb), (1.0 + alpha) * beta / (2.0 + vb)];
    let got = s.conditional(0, 0);
    let lda_err = (0..2).map(|t| (got[t] - u[t] / (u[0] + u[1])).abs()).fold(0.0, f64::max);
    ensure!(lda_err <= LDA_TOL, "LDA conditional off by {lda_err:e}");

    // Gradients of the embedding and logistic objectives.
    let mut grad_worst = 0.0f64;
    let dim = 6;
    for _ in 0..50 {
        let th: Vec<f64> = gaussian::<f64>(&mut rng, dim * 5).iter().map(|x| 0.5 * x).collect();
        let c: Vec<&[f64]> = th.chunks(dim).collect();
        let g = skipgram_grad(c[0], c[1], &c[2..]);
        let an: Vec<f64> = g.inputs.iter().chain(&g.outputs).flatten().copied().collect();
        let nu = fd_grad(&th, |t| {
            let c: Vec<&[f64]> = t.chunks(dim).collect();
            skipgram_loss(c[0], c[1], &c[2..])
        });
        grad_worst = grad_worst.max(rel_err(&an, &nu));

        let th: Vec<f64> = gaussian::<f64>(&mut rng, dim * 7).iter().map(|x| 0.5 * x).collect();
        let c: Vec<&[f64]> = th.chunks(dim).collect();
        let g = cbow_grad(&c[..3], c[3], &c[4..]);
        let an: Vec<f64> = g.inputs.iter().chain(&g.outputs).flatten().copied().collect();
        let nu = fd_grad(&th, |t| {
            let c: Vec<&[f64]> = t.chunks(dim).collect();
            cbow_loss(&c[..3], c[3], &c[4..])
        });
        grad_worst = grad_worst.max(rel_err(&an, &nu));

        let th: Vec<f64> = gaussian::<f64>(&mut rng, 2 * dim + 2).iter().map(|x| 0.3 * x).collect();
        let x = rng.random_range(0.5..300.0);
        let (gw, gc, gb, gbc) = glove_entry_grad(&th[..dim], &th[dim..2 * dim], th[2 * dim], th[2 * dim + 1], x, 100.0, 0.75);
        let mut an = gw;
        an.extend(gc);
        an.extend([gb, gbc]);
        let nu = fd_grad(&th, |t| glove_entry_loss(&t[..dim], &t[dim..2 * dim], t[2 * dim], t[2 * dim + 1], x, 100.0, 0.75));
        grad_worst = grad_worst.max(rel_err(&an, &nu));
    }
    let xs: Vec<DocVector> = (0..30).map(|_| DocVector::new(gaussian(&mut rng, dim), Producer::Tfidf)).collect();
    let ys: Vec<Label> = (0..30).map(|i| if i % 2 == 0 { Label::Threat } else { Label::NonThreat }).collect();
    for _ in 0..50 {
        let th: Vec<f64> = gaussian(&mut rng, dim + 1);
        let model = |t: &[f64]| LogisticModel { weights: t[..dim].to_vec(), bias: t[dim] };
        let (mut an, gb) = logistic_grad(&model(&th), &xs, &ys, 0.1);
        an.push(gb);
        let nu = fd_grad(&th, |t| logistic_loss(&model(t), &xs, &ys, 0.1));
        grad_worst = grad_worst.max(rel_err(&an, &nu));
    }
    ensure!(grad_worst <= CLASSICAL_FD_REL_TOL, "gradient relative error {grad_worst:e}");
    Ok(format!("TF-IDF exact; SVD error {svd_worst:.1e}; LDA error {lda_err:.1e}; gradient rel error {grad_worst:.1e}"))
}

// ---------------------------------------------------------------- protocol

fn upsampling_protocol() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..UPSAMPLE_TRIALS {
        let n_min = rng.random_range(3..40);
        let n_maj = n_min + rng.random_range(1..200);
        let minority = if trial % 2 == 0 { Label::Threat } else { Label::NonThreat };
        let majority = if minority == Label::Threat { Label::NonThreat } else { Label::Threat };
        let mut docs: Vec<Document> = (0..n_min).map(|i| Document::new(format!("min {trial} {i}"), minority, "m")).collect();
        docs.extend((0..n_maj).map(|i| Document::new(format!("maj {trial} {i}"), majority, "M")));
        let ds = LabeledDataset::new(docs);
        let split = stratified_split(&ds, 0.1, trial as u64).unwrap();
        let test_hash = sha256_hex(&to_csv_bytes(&split.test).unwrap());
        let up = upsample_minority(&split.train, 100 + trial as u64).unwrap();
        ensure!(sha256_hex(&to_csv_bytes(&split.test).unwrap()) == test_hash, "trial {trial}: test set changed");
        let [n0, n1] = up.class_counts();
        ensure!(n0 == n1, "trial {trial}: counts {n0} vs {n1}");
        let minority_texts: HashSet<&str> = split.train.of_class(minority).map(|d| d.text.as_str()).collect();
        ensure!(
            up.of_class(minority).all(|d| minority_texts.contains(d.text.as_str())),
            "trial {trial}: resampled text outside the minority set"
        );
        let maj_before: Vec<&Document> = split.train.of_class(majority).collect();
        let maj_after: Vec<&Document> = up.of_class(majority).collect();
        ensure!(maj_before == maj_after, "trial {trial}: majority side changed");
    }
    Ok(format!("{UPSAMPLE_TRIALS} random imbalanced splits balanced, test hash unchanged, minority-only resampling"))
}

// ---------------------------------------------------------------- grid

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn f1_of(rows: &[ResultRow], method: Method, upsampled: bool) -> Vec<f64> {
    rows.iter().filter(|r| r.method == method && r.upsampled == upsampled).map(|r| r.report().map_or(f64::NAN, |m| m.f_1)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn end_to_end() -> Check {
    let path = manifest_dir().join("configs/acceptance.toml");
    let bytes = std::fs::read(&path).unwrap();
    let cfg = ExperimentConfig::from_toml(std::str::from_utf8(&bytes).unwrap()).unwrap();
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let result = run_bench(&cfg, &bytes, "acceptance.toml", path.parent().unwrap(), out.path(), &mut |r| {
        let status = r.report().map_or("failed".to_string(), |m| format!("F1 {:.2} AUC {:.2}", m.f_1, m.auc));
        eprintln!("    seed {} {} {}: {status}", r.seed, r.method.key(), if r.upsampled { "upsampled" } else { "plain" });
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rows = &result.rows;
    println!("{}", threatbench_bench::table::emit_table(&result.table, threatbench_bench::table::TableFormat::Markdown).unwrap());

    let mut problems = Vec::new();
    if result.manifest.failed_rows > 0 {
        problems.push(format!("{} failed cells", result.manifest.failed_rows));
    }
    for r in rows.iter().filter(|r| r.method == Method::TransformerLora && !r.upsampled) {
        match r.report() {
            Some(m) if m.f_1 >= E2E_TRANSFORMER_F1 && m.auc >= E2E_TRANSFORMER_AUC => {}
            Some(m) => problems.push(format!("transformer seed {}: F1 {:.2}, AUC {:.2}", r.seed, m.f_1, m.auc)),
            None => problems.push(format!("transformer seed {} failed", r.seed)),
        }
    }
    let classical: Vec<Method> = cfg.methods.iter().copied().filter(|m| !m.is_transformer()).collect();
    let mut improved = Vec::new();
    for &m in &classical {
        let plain = f1_of(rows, m, false);
        if let Some(bad) = plain.iter().find(|&&f| !(f >= E2E_CLASSICAL_F1)) {
            problems.push(format!("{m} without upsampling: F1 {bad:.2}"));
        }
        let (p, u) = (mean(&plain), mean(&f1_of(rows, m, true)));
        if u > p {
            improved.push(format!("{m} {p:.2}->{u:.2}"));
        }
    }
    if improved.len() < E2E_MIN_IMPROVED {
        let all: Vec<String> = classical
            .iter()
            .map(|&m| format!("{m} {:.2}->{:.2}", mean(&f1_of(rows, m, false)), mean(&f1_of(rows, m, true))))
            .collect();
        problems.push(format!(
            "{} of {} classical methods improve mean F1 under upsampling, need {E2E_MIN_IMPROVED} ({})",
            improved.len(),
            classical.len(),
            all.join(", ")
        ));
    }
    if elapsed >= E2E_BUDGET {
        problems.push(format!("run took {:.0} s", elapsed.as_secs_f64()));
    }
    let tf1 = mean(&f1_of(rows, Method::TransformerLora, false));
    ensure!(problems.is_empty(), "{}", problems.join("; "));
    Ok(format!(
        "transformer mean F1 {tf1:.2}; classical F1 >= {E2E_CLASSICAL_F1}; improved: {}; {:.0} s",
        improved.join(", "),
        elapsed.as_secs_f64()
    ))
}

const QUICK_CONFIG: &str = r#"
methods = ["tfidf", "glove", "cbow", "skipgram", "lda", "lsi", "transformer_lora"]
upsampling = "both"

[[scenarios]]
id = "quick"
n_nonthreat = 240
[scenarios.synthetic]
n_threat = 60

[hyper.ensemble.forest]
n_trees = 15
[hyper.lda]
k = 5
iters = 40
[hyper.lsi]
k = 10
[hyper.word2vec]
dim = 16
epochs = 3
[hyper.glove]
dim = 16
epochs = 10
[hyper.transformer]
bpe_vocab = 400
[hyper.transformer.model]
max_len = 32
[hyper.transformer.train]
epochs = 3
"#;

fn bench_cli(config: &Path, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_threatbench"))
        .args(["bench", "--config"])
        .arg(config)
        .args(["--seed", "7", "--quiet", "--out-dir"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("bench exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

fn determinism(work: &Path) -> Check {
    let config = work.join("quick.toml");
    std::fs::write(&config, QUICK_CONFIG).unwrap();
    let (a, b) = (work.join("run-a"), work.join("run-b"));
    bench_cli(&config, &a)?;
    bench_cli(&config, &b)?;
    for f in ["results.csv", "manifest.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        ensure!(x == y, "{f} differs between runs");
    }
    let csv = std::fs::read(a.join("results.csv")).unwrap();
    Ok(format!("results.csv ({} bytes, sha256 {}) and manifest.json byte-identical", csv.len(), &sha256_hex(&csv)[..12]))
}

fn is_pct(s: &str) -> bool {
    let Some((int, frac)) = s.split_once('.') else { return false };
    !int.is_empty() && int.len() <= 3 && int.bytes().all(|b| b.is_ascii_digit()) && frac.len() == 2 && frac.bytes().all(|b| b.is_ascii_digit())
}

fn table_fidelity(work: &Path) -> Check {
    let run = work.join("run-a");
    let o = Command::new(env!("CARGO_BIN_EXE_threatbench"))
        .args(["report", "--input"])
        .arg(run.join("results.csv"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(o.status.success(), "report exited {:?}", o.status.code());
    let md = String::from_utf8(o.stdout).unwrap();
    ensure!(md.as_bytes() == std::fs::read(run.join("results.md")).unwrap(), "report output differs from results.md");
    let header = md.lines().find(|l| l.starts_with("| Method")).ok_or("no table header")?;
    ensure!(header == "| Method | Acc | F1 | F0.5 | F2 | AUC |", "header {header:?}");
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Method")).collect();
    ensure!(rows.len() == 7, "{} method rows", rows.len());
    let mut example = String::new();
    for row in &rows {
        let cells: Vec<&str> = row.trim_matches('|').split('|').map(str::trim).collect();
        ensure!(cells.len() == 6, "row {row:?}");
        for cell in &cells[1..] {
            let ok = cell
                .split_once(" (")
                .and_then(|(p, rest)| rest.strip_suffix(')').map(|u| is_pct(p) && is_pct(u)))
                .unwrap_or(false);
            ensure!(ok, "cell {cell:?} is not `plain (upsampled)` with 2 decimals");
        }
        if example.is_empty() {
            example = format!("{} F1 {}", cells[0], cells[2]);
        }
    }
    ensure!(md.contains("Bracketed"), "no note explaining the bracketed values");
    Ok(format!("{} rows of `value (upsampled)` cells, e.g. {example}", rows.len()))
}

// ---------------------------------------------------------------- driver

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {id:>2} {name} ({secs:.1} s): {detail}");
            true
        }
        Err(why) => {
            println!("FAIL {id:>2} {name} ({secs:.1} s): {why}");
            false
        }
    }
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let results = [
        run(1, "LoRA zero-start", lora_zero_start),
        run(2, "merge equivalence", merge_equivalence),
        run(3, "loss correctness", loss_correctness),
        run(4, "F-beta correctness", f_beta_correctness),
        run(5, "AUC dual implementation", auc_equivalence),
        run(6, "attention degeneracies", attention_degeneracies),
        run(7, "classical oracles", classical_oracles),
        run(8, "upsampling protocol", upsampling_protocol),
        run(9, "scaled-down end-to-end", end_to_end),
        run(10, "determinism", || determinism(work.path())),
        run(11, "table fidelity", || table_fidelity(work.path())),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        if std::env::var_os(STRICT_ENV).is_some() {
            std::process::exit(1);
        }
        println!("FAIL lines are reported without failing the target; set {STRICT_ENV}=1 to exit non-zero");
    }
}
