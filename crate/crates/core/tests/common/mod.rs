//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turnrank::encoder_input::EncodedInput;
use turnrank::model::{HeadGradients, Model, ModelConfig};

/// The gradient-check configuration: vocab 32, hidden 16, 2 layers, 2 heads, seq 24.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 32,
        hidden_dim: 16,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 32,
        max_seq_len: 24,
        num_speaker_roles: 3,
        dropout_rate: 0.0,
        seed: 17,
    }
}

/// A random well-formed input with `active` attended positions out of `len`.
pub fn random_input(rng: &mut ChaCha8Rng, vocab: usize, len: usize, active: usize) -> EncodedInput {
    let boundary = active / 2;
    let mut input = EncodedInput {
        token_ids: (0..len).map(|_| rng.random_range(7..vocab)).collect(),
        segment_ids: (0..len).map(|i| usize::from(i > boundary && i < active)).collect(),
        position_ids: (0..len).collect(),
        speaker_ids: (0..len).map(|i| if i < active { rng.random_range(0..3) } else { 0 }).collect(),
        attention_mask: (0..len).map(|i| u8::from(i < active)).collect(),
    };
    input.token_ids[0] = 2;
    input.speaker_ids[0] = 0;
    for t in &mut input.token_ids[active..] {
        *t = 0;
    }
    input
}

/// Loss exercising every head: BCE on the match logit, CE on the two-way
/// head and CE at a few masked positions. Written independently of the
/// library's own loss code.
pub struct ProbeLoss {
    pub match_label: f64,
    pub nsp_label: usize,
    pub mlm_targets: Vec<(usize, usize)>,
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

impl ProbeLoss {
    pub fn value(&self, model: &Model, input: &EncodedInput) -> f64 {
        let out = model.forward(input).unwrap();
        let z = out.match_logit;
        // BCE with logits: softplus(z) - y z
        let bce = z.max(0.0) + (-z.abs()).exp().ln_1p() - self.match_label * z;
        let nsp = -log_softmax(&out.nsp_logits)[self.nsp_label];
        let mlm = out.mlm_logits.unwrap();
        let mut mlm_loss = 0.0;
        for &(pos, target) in &self.mlm_targets {
            let row: Vec<f64> = mlm.row(pos).to_vec();
            mlm_loss -= log_softmax(&row)[target];
        }
        bce + nsp + mlm_loss
    }

    pub fn head_gradients(&self, model: &Model, input: &EncodedInput) -> (HeadGradients, turnrank::model::ForwardTrace) {
        let out = model.forward(input).unwrap();
        let s = 1.0 / (1.0 + (-out.match_logit).exp());
        let nsp_p: Vec<f64> = log_softmax(&out.nsp_logits).iter().map(|l| l.exp()).collect();
        let mut nsp = [nsp_p[0], nsp_p[1]];
        nsp[self.nsp_label] -= 1.0;
        let logits = out.mlm_logits.unwrap();
        let mlm = self
            .mlm_targets
            .iter()
            .map(|&(pos, target)| {
                let row: Vec<f64> = logits.row(pos).to_vec();
                let mut g: Vec<f64> = log_softmax(&row).iter().map(|l| l.exp()).collect();
                g[target] -= 1.0;
                (pos, g)
            })
            .collect();
        (
            HeadGradients {
                match_logit: s - self.match_label,
                nsp_logits: nsp,
                mlm,
            },
            out.trace,
        )
    }
}

/// Per-tensor relative error between analytic and central-difference gradients:
/// `max_i |a_i - n_i| / max_i max(|a_i|, |n_i|)`, or the absolute error when the
/// whole tensor's gradient is below 1e-10 (structurally zero gradients).
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

/// Central finite differences over every parameter entry.
pub fn finite_difference_check(
    model: &Model,
    input: &EncodedInput,
    loss: &ProbeLoss,
    eps: f64,
) -> Vec<TensorCheck> {
    let (heads, trace) = loss.head_gradients(model, input);
    let analytic = model.backward(&trace, &heads).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();

    let mut probe = model.clone();
    let mut report = Vec::new();
    for (ti, (name, grads)) in analytic.iter().enumerate() {
        let mut worst_abs = 0.0f64;
        let mut max_abs = 0.0f64;
        for (ei, &a) in grads.iter().enumerate() {
            let original = tensor_entry(&mut probe, ti, ei, None);
            tensor_entry(&mut probe, ti, ei, Some(original + eps));
            let plus = loss.value(&probe, input);
            tensor_entry(&mut probe, ti, ei, Some(original - eps));
            let minus = loss.value(&probe, input);
            tensor_entry(&mut probe, ti, ei, Some(original));
            let numeric = (plus - minus) / (2.0 * eps);
            worst_abs = worst_abs.max((a - numeric).abs());
            max_abs = max_abs.max(a.abs()).max(numeric.abs());
        }
        let worst = if max_abs < 1e-10 { worst_abs } else { worst_abs / max_abs };
        report.push(TensorCheck {
            name: name.clone(),
            max_rel_error: worst,
            max_abs_grad: max_abs,
        });
    }
    report
}

fn tensor_entry(model: &mut Model, tensor: usize, entry: usize, set: Option<f64>) -> f64 {
    let mut tensors = model.params.tensors_mut();
    let t = &mut tensors[tensor].1;
    let slot = t.iter_mut().nth(entry).unwrap();
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
