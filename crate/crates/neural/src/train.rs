//! Minibatch fine-tuning with AdamW and class-weighted cross-entropy.
//!
//! Each step runs every example in the batch forward and backward on its own
//! and sums the gradients, which equals the batch gradient because the loss
//! normalizer `Σ w_{y_n}` is folded into the per-example logit gradients.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use threatbench_core::seed;
use threatbench_core::tokenizer::TokenSequence;

use crate::error::{shape, NeuralError, Result};
use crate::loss::{class_weights, softmax, weighted_cross_entropy, ClassWeighting};
use crate::model::{
    attach_adapters, backward, forward_ids, forward_with_cache, lora_merge, BaseWeights, Grads, LoraAdapter,
    LoraConfig, Target,
};
use crate::optim::{AdamState, AdamW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lora: LoraConfig,
    pub optimizer: AdamW,
    pub batch_size: usize,
    pub epochs: usize,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lora: LoraConfig::default(),
            optimizer: AdamW::default(),
            batch_size: 16,
            epochs: 10,
            class_weighting: ClassWeighting::Uniform,
            seed: 0,
        }
    }
}

/// Optimizer state for one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub optimizer: AdamW,
    pub adam: AdamState,
    pub batch_size: usize,
    pub epochs: usize,
    pub class_weights: Vec<f64>,
    pub seed: u64,
}

/// Result of [`finetune`].
#[derive(Debug, Clone, PartialEq)]
pub struct FineTuned {
    /// The input model with its trained head (and, when not frozen, its
    /// trained embedding and blocks).
    pub base: BaseWeights,
    pub adapters: Vec<LoraAdapter>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub state: TrainState,
}

impl FineTuned {
    /// Adapters folded into the base matrices.
    pub fn merged(&self) -> Result<BaseWeights> {
        lora_merge(&self.base, &self.adapters)
    }

    pub fn trainable_parameter_count(&self) -> usize {
        trainable_parameter_count(&self.base, &self.adapters)
    }
}

/// `Σ r (d + k)` over adapters, plus the head, plus the embedding and blocks
/// when they are not frozen.
pub fn trainable_parameter_count(base: &BaseWeights, adapters: &[LoraAdapter]) -> usize {
    let lora: usize = adapters.iter().map(LoraAdapter::parameter_count).sum();
    let body = if base.frozen { 0 } else { base.frozen_parameter_count() };
    lora + base.head_parameter_count() + body
}

/// Trainable tensors in optimizer order: each adapter's `M_A` then `M_B`,
/// the head, the head bias, then the embedding and block matrices when the
/// body is trainable.
fn param_slices<'a>(base: &'a mut BaseWeights, adapters: &'a mut [LoraAdapter]) -> Vec<&'a mut [f32]> {
    let mut out: Vec<&mut [f32]> = Vec::new();
    for ad in adapters.iter_mut() {
        out.push(&mut ad.a.data);
        out.push(&mut ad.b.data);
    }
    let frozen = base.frozen;
    out.push(&mut base.head.data);
    out.push(&mut base.head_bias);
    if !frozen {
        out.push(&mut base.embedding.data);
        for layer in base.layers.iter_mut() {
            let crate::model::LayerWeights { wq, wk, wv, wo, w_up, w_down } = layer;
            for m in [wq, wk, wv, wo, w_up, w_down] {
                out.push(&mut m.data);
            }
        }
    }
    out
}

fn grad_slices(g: &Grads) -> Vec<&[f32]> {
    let mut out: Vec<&[f32]> = Vec::new();
    for ag in &g.adapters {
        out.push(&ag.a.data);
        out.push(&ag.b.data);
    }
    out.push(&g.head.data);
    out.push(&g.head_bias);
    if let Some(bg) = &g.base {
        out.push(&bg.embedding.data);
        for layer in &bg.layers {
            for t in Target::ALL {
                out.push(&layer.get(t).data);
            }
        }
    }
    out
}

/// Loss of one batch and its gradient with respect to every trainable
/// tensor.
pub fn batch_loss_and_grads(
    base: &BaseWeights,
    adapters: &[LoraAdapter],
    batch: &[&[u32]],
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Grads)> {
    if batch.len() != labels.len() {
        return Err(shape("batch labels", batch.len(), labels.len()));
    }
    let c = base.config.n_classes;
    let mut logits = Vec::with_capacity(batch.len() * c);
    let mut caches = Vec::with_capacity(batch.len());
    for ids in batch {
        let (l, cache) = forward_with_cache(base, adapters, ids)?;
        logits.extend(l.iter().map(|&v| f64::from(v)));
        caches.push(cache);
    }
    let (loss, d_logits) = weighted_cross_entropy(&logits, c, labels, class_weights)?;
    let mut grads = Grads::zeros(base, adapters, !base.frozen);
    for (i, cache) in caches.iter().enumerate() {
        let dl: Vec<f32> = d_logits[i * c..(i + 1) * c].iter().map(|&v| v as f32).collect();
        backward(base, adapters, cache, &dl, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Attach adapters per `cfg.lora` and train them together with the head
/// (and the body, if `base.frozen` is false).
pub fn finetune(base: &BaseWeights, cfg: &TrainConfig, train: &[TokenSequence], labels: &[usize]) -> Result<FineTuned> {
    if train.is_empty() {
        return Err(NeuralError::Empty("training set".into()));
    }
    if train.len() != labels.len() {
        return Err(shape("training labels", train.len(), labels.len()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(NeuralError::InvalidConfig("batch size and epochs must be positive".into()));
    }
    cfg.optimizer.validate()?;
    let weights = class_weights(labels, base.config.n_classes, cfg.class_weighting)?;
    let mut model = base.clone();
    let mut adapters = if cfg.lora.targets.is_empty() {
        Vec::new()
    } else {
        attach_adapters(&model, &cfg.lora, cfg.seed)?
    };
    let sizes: Vec<usize> = param_slices(&mut model, &mut adapters).iter().map(|s| s.len()).collect();
    let mut state = TrainState {
        optimizer: cfg.optimizer,
        adam: AdamState::new(&sizes),
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        class_weights: weights,
        seed: cfg.seed,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng_for(cfg.seed, &[seed::tag("finetune-shuffle"), epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[u32]> = chunk.iter().map(|&i| train[i].active()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = batch_loss_and_grads(&model, &adapters, &batch, &ys, &state.class_weights)?;
            if !loss.is_finite() {
                return Err(NeuralError::NonFinite(format!("loss at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            let g = grad_slices(&grads);
            let mut p = param_slices(&mut model, &mut adapters);
            state.adam.step(&state.optimizer, &mut p, &g)?;
        }
        epoch_losses.push(total / train.len() as f64);
    }
    Ok(FineTuned {
        base: model,
        adapters,
        epoch_losses,
        state,
    })
}

/// Class probabilities for one sequence.
pub fn predict_proba(base: &BaseWeights, adapters: &[LoraAdapter], tokens: &TokenSequence) -> Result<Vec<f64>> {
    let logits: Vec<f64> = forward_ids(base, adapters, tokens.active())?
        .into_iter()
        .map(f64::from)
        .collect();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFinite("logits".into()));
    }
    Ok(softmax(&logits))
}
