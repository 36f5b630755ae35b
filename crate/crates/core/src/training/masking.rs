use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder_input::EncodedInput;
use crate::error::{Error, Result};
use crate::tokenizer::{CLS, EOT, EOU, MASK, NUM_SPECIALS, PAD, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedPosition {
    pub index: usize,
    pub action: MaskAction,
    pub original: usize,
    pub replacement: usize,
}

/// Corruptions applied to one input; targets are always the original tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub positions: Vec<MaskedPosition>,
}

fn is_structural(id: usize) -> bool {
    matches!(id, CLS | SEP | EOU | EOT | PAD)
}

/// Attended positions holding content tokens.
pub fn maskable_positions(input: &EncodedInput) -> Vec<usize> {
    (0..input.len())
        .filter(|&i| input.attention_mask[i] == 1 && !is_structural(input.token_ids[i]))
        .collect()
}

/// Selects `round(mask_fraction * maskable)` positions (at least one) uniformly
/// without replacement, then masks 80%, randomizes 10% and keeps 10% of them.
pub fn plan_masking<R: Rng + ?Sized>(
    input: &EncodedInput,
    vocab_size: usize,
    mask_fraction: f64,
    rng: &mut R,
) -> Result<MaskingPlan> {
    if !(mask_fraction > 0.0 && mask_fraction < 1.0) {
        return Err(Error::Config(format!("mask_fraction must lie in (0, 1), got {mask_fraction}")));
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(Error::Config("vocabulary has no content tokens to sample".into()));
    }
    let candidates = maskable_positions(input);
    if candidates.is_empty() {
        return Err(Error::Input("sequence has no maskable tokens".into()));
    }
    let count = ((mask_fraction * candidates.len() as f64).round() as usize).clamp(1, candidates.len());
    let mut chosen: Vec<usize> = index::sample(rng, candidates.len(), count)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    chosen.sort_unstable();
    let positions = chosen
        .into_iter()
        .map(|i| {
            let original = input.token_ids[i];
            let u: f64 = rng.random();
            let (action, replacement) = if u < 0.8 {
                (MaskAction::Mask, MASK)
            } else if u < 0.9 {
                (MaskAction::Random, rng.random_range(NUM_SPECIALS..vocab_size))
            } else {
                (MaskAction::Keep, original)
            };
            MaskedPosition {
                index: i,
                action,
                original,
                replacement,
            }
        })
        .collect();
    Ok(MaskingPlan { positions })
}

impl MaskingPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn apply(&self, input: &EncodedInput) -> EncodedInput {
        let mut out = input.clone();
        for p in &self.positions {
            out.token_ids[p.index] = p.replacement;
        }
        out
    }

    pub fn indices(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p.index).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input_with(content: usize) -> EncodedInput {
        let mut token_ids = vec![CLS];
        token_ids.extend((0..content).map(|i| NUM_SPECIALS + i % 5));
        token_ids.extend([EOU, EOT, SEP, SEP, PAD, PAD]);
        let len = token_ids.len();
        let mut attention_mask = vec![1; len];
        attention_mask[len - 2..].fill(0);
        EncodedInput {
            token_ids,
            segment_ids: vec![0; len],
            position_ids: (0..len).collect(),
            speaker_ids: vec![0; len],
            attention_mask,
        }
    }

    #[test]
    fn selection_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = plan_masking(&input_with(20), 30, 0.15, &mut rng).unwrap();
        assert_eq!(plan.len(), 3);
        let plan = plan_masking(&input_with(1), 30, 0.15, &mut rng).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.positions[0].index, 1);
    }

    #[test]
    fn degenerate_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(plan_masking(&input_with(0), 30, 0.15, &mut rng).is_err());
        assert!(plan_masking(&input_with(3), 30, 1.0, &mut rng).is_err());
    }

    #[test]
    fn action_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = input_with(40);
        for _ in 0..200 {
            let plan = plan_masking(&input, 30, 0.15, &mut rng).unwrap();
            for p in &plan.positions {
                assert!(!is_structural(input.token_ids[p.index]));
                assert_eq!(p.original, input.token_ids[p.index]);
                match p.action {
                    MaskAction::Mask => assert_eq!(p.replacement, MASK),
                    MaskAction::Keep => assert_eq!(p.replacement, p.original),
                    MaskAction::Random => assert!((NUM_SPECIALS..30).contains(&p.replacement)),
                }
            }
            let masked = plan.apply(&input);
            assert_eq!(masked.token_ids.len(), input.token_ids.len());
        }
    }
}
