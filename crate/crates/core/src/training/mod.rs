//! Two-phase training: domain adaptation on masked tokens plus next-response
//! prediction, then fine-tuning of the matching head with binary cross-entropy.
//!
//! Both phases share one loop: shuffled mini-batches, gradients computed per
//! example in parallel and summed in example order, AdamW updates with a
//! learning rate decayed linearly to zero over the planned steps, and
//! checkpoint selection on a validation set after every epoch.

mod loss;
mod masking;
mod nsp;
mod optimizer;

use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, DialogueExample};
use crate::encoder_input::{EncodedInput, PairEncoder};
use crate::error::{Error, Result};
use crate::eval::{recall_at_k, EvalMode, RankedPool};
use crate::model::{ForwardOptions, HeadGradients, MlmHead, Model, ParamGradients};

pub use loss::{adaptation_loss, adaptation_objective, finetune_loss, finetune_objective, AdaptationWeights};
pub use masking::{maskable_positions, plan_masking, MaskAction, MaskedPosition, MaskingPlan};
pub use nsp::{build_nsp_pair, Dialogue, NspBranch};
pub use optimizer::AdamW;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optional hard cap on optimizer steps; the linear decay plans for the
    /// smaller of this and `max_epochs` worth of batches.
    pub max_steps: Option<usize>,
    pub mask_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mlm_weight: f64,
    pub nsp_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Zero the speaker-role table and keep it frozen.
    pub disable_speaker_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 25,
            max_epochs: 3,
            max_steps: None,
            mask_fraction: 0.15,
            weight_decay: 0.01,
            seed: 0,
            mlm_weight: 1.0,
            nsp_weight: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-6,
            disable_speaker_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be positive");
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be positive");
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return fail("mask_fraction must lie in (0, 1)");
        }
        if self.weight_decay < 0.0 || self.mlm_weight < 0.0 || self.nsp_weight < 0.0 {
            return fail("weights must be non-negative");
        }
        Ok(())
    }

    pub fn adaptation_weights(&self) -> AdaptationWeights {
        AdaptationWeights {
            mlm: self.mlm_weight,
            nsp: self.nsp_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adapt,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Adapt => "adapt",
            Phase::Finetune => "finetune",
        }
    }
}

/// Linear decay: `lr0 * (1 - step / total)`.
pub fn learning_rate_at(lr0: f64, step: usize, total: usize) -> f64 {
    lr0 * (1.0 - step as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
}

/// CSV with header `step,phase,loss,lr`.
pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut out = String::from("step,phase,loss,lr\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.phase.name(), r.loss, r.lr);
    }
    out
}

/// A labelled fine-tuning input.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledInput {
    pub input: EncodedInput,
    pub label: u8,
}

/// Encoded candidates of one pool, for validation and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPool {
    pub inputs: Vec<EncodedInput>,
    pub labels: Vec<u8>,
}

/// Encodes labelled examples with `encoder`.
pub fn encode_examples(encoder: &PairEncoder<'_>, examples: &[DialogueExample]) -> Result<Vec<LabelledInput>> {
    examples
        .iter()
        .map(|e| {
            Ok(LabelledInput {
                input: encoder.encode(&e.context, &e.response)?,
                label: e.label,
            })
        })
        .collect()
}

/// Encodes every candidate of every pool against its context.
pub fn encode_pools(encoder: &PairEncoder<'_>, pools: &[CandidatePool]) -> Result<Vec<EncodedPool>> {
    pools
        .iter()
        .map(|p| {
            let inputs = p
                .candidates
                .iter()
                .map(|(c, _)| encoder.encode(&p.context, c))
                .collect::<Result<_>>()?;
            Ok(EncodedPool { inputs, labels: p.labels() })
        })
        .collect()
}

/// Positive examples as adaptation dialogues.
pub fn dialogues_from_examples(examples: &[DialogueExample]) -> Vec<Dialogue> {
    examples
        .iter()
        .filter(|e| e.is_positive())
        .map(|e| Dialogue {
            context: e.context.clone(),
            response: e.response.clone(),
        })
        .collect()
}

/// One fixed, pre-masked adaptation example.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationItem {
    pub input: EncodedInput,
    pub plan: MaskingPlan,
    pub nsp_label: u8,
}

pub enum TrainData<'a> {
    Finetune(&'a [LabelledInput]),
    /// Pairs and masks are redrawn on every visit.
    Adapt {
        dialogues: &'a [Dialogue],
        encoder: PairEncoder<'a>,
    },
}

impl TrainData<'_> {
    fn len(&self) -> usize {
        match self {
            TrainData::Finetune(v) => v.len(),
            TrainData::Adapt { dialogues, .. } => dialogues.len(),
        }
    }

    fn phase(&self) -> Phase {
        match self {
            TrainData::Finetune(_) => Phase::Finetune,
            TrainData::Adapt { .. } => Phase::Adapt,
        }
    }
}

pub enum Validation {
    /// Higher R_n@1 is better.
    Pools(Vec<EncodedPool>),
    /// Lower mean combined adaptation loss is better.
    Adaptation(Vec<AdaptationItem>),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
    /// Validation value after each epoch.
    pub validation: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub steps: usize,
}

/// Deterministic per-example stream: independent of thread scheduling.
fn example_rng(seed: u64, step: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 20) | slot as u64);
    rng
}

/// Encodes a fixed adaptation validation set from `dialogues`.
pub fn adaptation_validation_set(
    dialogues: &[Dialogue],
    encoder: &PairEncoder<'_>,
    mask_fraction: f64,
    seed: u64,
) -> Result<Vec<AdaptationItem>> {
    let vocab_size = encoder.vocab.len();
    (0..dialogues.len())
        .map(|i| {
            let mut rng = example_rng(seed, usize::MAX >> 20, i);
            let (input, nsp_label) = build_nsp_pair(dialogues, i, encoder, &mut rng, None)?;
            let plan = plan_masking(&input, vocab_size, mask_fraction, &mut rng)?;
            Ok(AdaptationItem { input, plan, nsp_label })
        })
        .collect()
}

fn adaptation_step(
    model: &Model,
    item: &AdaptationItem,
    weights: AdaptationWeights,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, HeadGradients, crate::model::ForwardTrace)> {
    let masked = item.plan.apply(&item.input);
    let options = ForwardOptions {
        mlm: MlmHead::At(item.plan.indices()),
    };
    let out = model.forward_with(&masked, &options, rng)?;
    let logits = out.mlm_logits.as_ref().expect("mlm head requested");
    let (loss, heads) = adaptation_objective(logits, &item.plan, out.nsp_logits, item.nsp_label, weights)?;
    Ok((loss, heads, out.trace))
}

fn finetune_step(
    model: &Model,
    example: &LabelledInput,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, HeadGradients, crate::model::ForwardTrace)> {
    let out = model.forward_with(&example.input, &ForwardOptions { mlm: MlmHead::Off }, rng)?;
    let (loss, d_logit) = finetune_objective(out.match_logit, example.label);
    let heads = HeadGradients {
        match_logit: d_logit,
        ..Default::default()
    };
    Ok((loss, heads, out.trace))
}

/// Mean combined adaptation loss over fixed items.
pub fn adaptation_validation_loss(model: &Model, items: &[AdaptationItem], weights: AdaptationWeights) -> Result<f64> {
    let losses: Vec<f64> = items
        .par_iter()
        .map(|item| adaptation_step(model, item, weights, None).map(|(l, _, _)| l))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Scores every pool with the matching head.
pub fn rank_encoded_pools(model: &Model, pools: &[EncodedPool]) -> Result<Vec<RankedPool>> {
    pools
        .par_iter()
        .map(|pool| {
            let scores = pool.inputs.iter().map(|i| model.score(i)).collect::<Result<Vec<_>>>()?;
            RankedPool::from_scores(scores, pool.labels.clone())
        })
        .collect()
}

/// R_n@1 with `n` the pool size; pools without positives are skipped.
pub fn validation_recall_at_1(model: &Model, pools: &[EncodedPool]) -> Result<f64> {
    let ranked = rank_encoded_pools(model, pools)?;
    let n = ranked.iter().map(RankedPool::len).min().unwrap_or(1);
    recall_at_k(&ranked, n, 1, EvalMode::Lenient)
}

/// Fraction of examples whose thresholded score (0.5) matches the label.
pub fn accuracy(model: &Model, examples: &[LabelledInput]) -> Result<f64> {
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|e| model.score(&e.input).map(|s| (s >= 0.5) == (e.label == 1)))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}

/// Mean binary cross-entropy over examples.
pub fn mean_finetune_loss(model: &Model, examples: &[LabelledInput]) -> Result<f64> {
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|e| {
            model
                .forward_with(&e.input, &ForwardOptions { mlm: MlmHead::Off }, None)
                .map(|o| finetune_objective(o.match_logit, e.label).0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Runs one training phase and returns the parameters that scored best on
/// `validation` (or the final parameters when there is none).
pub fn train(data: TrainData<'_>, mut model: Model, config: &TrainConfig, validation: Option<&Validation>) -> Result<TrainOutcome> {
    config.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Input("training set is empty".into()));
    }
    if let TrainData::Adapt { dialogues, .. } = &data {
        if dialogues.len() < 2 {
            return Err(Error::Input("adaptation needs at least 2 dialogues".into()));
        }
    }
    let phase = data.phase();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let planned = batches_per_epoch * config.max_epochs;
    let total_steps = config.max_steps.map_or(planned, |cap| cap.min(planned));

    let mut optimizer = AdamW::new(
        &model.params,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
        config.weight_decay,
    );
    if config.disable_speaker_embeddings {
        model.params.zero_speaker_table();
        optimizer.freeze("speaker_table");
    }
    let weights = config.adaptation_weights();
    let dropout = model.config.dropout_rate > 0.0;

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(total_steps);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;

    'epochs: for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            if step >= total_steps {
                break;
            }
            let lr = learning_rate_at(config.learning_rate, step, total_steps);
            let results: Vec<(f64, ParamGradients)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let mut rng = example_rng(config.seed, step, slot);
                    let (loss, heads, trace) = match &data {
                        TrainData::Finetune(examples) => {
                            finetune_step(&model, &examples[i], dropout.then_some(&mut rng))?
                        }
                        TrainData::Adapt { dialogues, encoder } => {
                            let (input, nsp_label) = build_nsp_pair(dialogues, i, encoder, &mut rng, None)?;
                            let plan = plan_masking(&input, encoder.vocab.len(), config.mask_fraction, &mut rng)?;
                            let item = AdaptationItem { input, plan, nsp_label };
                            adaptation_step(&model, &item, weights, dropout.then_some(&mut rng))?
                        }
                    };
                    Ok((loss, model.backward(&trace, &heads)?))
                })
                .collect::<Result<_>>()?;

            let mut iter = results.into_iter();
            let (mut loss_sum, mut grads) = iter.next().expect("non-empty batch");
            for (l, g) in iter {
                loss_sum += l;
                grads.add_assign(&g);
            }
            let scale = 1.0 / batch.len() as f64;
            let loss = loss_sum * scale;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            grads.scale(scale);
            optimizer.step(&mut model.params, &grads, lr);
            log.push(LossRecord { step, phase, loss, lr });
            step += 1;
        }

        if let Some(v) = validation {
            let (value, better) = match v {
                Validation::Pools(pools) => {
                    let r = validation_recall_at_1(&model, pools)?;
                    (r, best.as_ref().is_none_or(|(b, _, _)| r > *b))
                }
                Validation::Adaptation(items) => {
                    let l = adaptation_validation_loss(&model, items, weights)?;
                    (l, best.as_ref().is_none_or(|(b, _, _)| l < *b))
                }
            };
            info!("{} epoch {epoch}: validation {value:.6}", phase.name());
            history.push(value);
            if better {
                best = Some((value, epoch, model.clone()));
            }
        }
        if step >= total_steps {
            break 'epochs;
        }
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        validation: history,
        best_epoch,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decay() {
        assert_eq!(learning_rate_at(2e-5, 0, 100), 2e-5);
        assert!((learning_rate_at(2e-5, 50, 100) - 1e-5).abs() < 1e-20);
        assert!((learning_rate_at(1.0, 3, 4) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.max_epochs, c.mask_fraction), (2e-5, 25, 3, 0.15));
        assert!(c.validate().is_ok());
        assert!(TrainConfig { mask_fraction: 1.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..c }.validate().is_err());
    }

    #[test]
    fn csv_log() {
        let log = vec![LossRecord { step: 0, phase: Phase::Finetune, loss: 0.5, lr: 0.1 }];
        assert_eq!(loss_log_csv(&log), "step,phase,loss,lr\n0,finetune,0.5,0.1\n");
    }
}
