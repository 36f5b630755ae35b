use ndarray::Array2;

use super::masking::MaskingPlan;
use crate::error::{Error, Result};
use crate::model::ops::log_sum_exp;
use crate::model::HeadGradients;

/// Weights of the two adaptation objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationWeights {
    pub mlm: f64,
    pub nsp: f64,
}

impl Default for AdaptationWeights {
    fn default() -> Self {
        AdaptationWeights { mlm: 1.0, nsp: 1.0 }
    }
}

/// Cross-entropy of `target` under softmax(`logits`) and its logit gradient.
fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| (z - lse).exp() - f64::from(j == target))
        .collect();
    (lse - logits[target], grad)
}

/// Combined adaptation loss and its gradients at the heads.
///
/// The masked-token term is the mean cross-entropy of the original tokens over
/// the planned positions; the next-response term is the two-way cross-entropy
/// against `nsp_label` (1 = true continuation).
pub fn adaptation_objective(
    mlm_logits: &Array2<f64>,
    plan: &MaskingPlan,
    nsp_logits: [f64; 2],
    nsp_label: u8,
    weights: AdaptationWeights,
) -> Result<(f64, HeadGradients)> {
    if plan.is_empty() {
        return Err(Error::Input("masking plan is empty".into()));
    }
    let count = plan.len() as f64;
    let mut mlm_loss = 0.0;
    let mut mlm = Vec::with_capacity(plan.len());
    for p in &plan.positions {
        let row = mlm_logits.row(p.index);
        let row = row.as_slice().expect("contiguous logits row");
        let (l, mut g) = softmax_cross_entropy(row, p.original);
        mlm_loss += l;
        g.iter_mut().for_each(|v| *v *= weights.mlm / count);
        mlm.push((p.index, g));
    }
    let (nsp_loss, nsp_grad) = softmax_cross_entropy(&nsp_logits, usize::from(nsp_label));
    let loss = weights.mlm * mlm_loss / count + weights.nsp * nsp_loss;
    Ok((
        loss,
        HeadGradients {
            match_logit: 0.0,
            nsp_logits: [weights.nsp * nsp_grad[0], weights.nsp * nsp_grad[1]],
            mlm,
        },
    ))
}

pub fn adaptation_loss(
    mlm_logits: &Array2<f64>,
    plan: &MaskingPlan,
    nsp_logits: [f64; 2],
    nsp_label: u8,
    weights: AdaptationWeights,
) -> Result<f64> {
    adaptation_objective(mlm_logits, plan, nsp_logits, nsp_label, weights).map(|(l, _)| l)
}

/// Binary cross-entropy of a matching probability.
pub fn finetune_loss(score: f64, label: u8) -> f64 {
    if label == 1 {
        -score.ln()
    } else {
        -(1.0 - score).ln()
    }
}

/// Binary cross-entropy computed from the logit, with d loss / d logit.
pub fn finetune_objective(logit: f64, label: u8) -> (f64, f64) {
    let y = f64::from(label);
    let loss = logit.max(0.0) + (-logit.abs()).exp().ln_1p() - y * logit;
    (loss, crate::model::sigmoid(logit) - y)
}
