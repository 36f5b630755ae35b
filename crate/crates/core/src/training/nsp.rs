use rand::Rng;

use crate::corpus::Utterance;
use crate::encoder_input::{EncodedInput, PairEncoder};
use crate::error::{Error, Result};

/// A context and its true continuation, the unit of the adaptation corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub context: Vec<Utterance>,
    pub response: Utterance,
}

/// Forces one branch of [`build_nsp_pair`]; `None` flips a fair coin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NspBranch {
    Positive,
    Negative,
}

/// Encodes `dialogues[index]` with either its true response (label 1) or a
/// response drawn uniformly from the other dialogues (label 0).
///
/// A sampled negative is re-attributed to the true response's speaker and slot,
/// so it is encoded exactly as a fine-tuning candidate would be. Draws that
/// repeat the true response text are rejected and redrawn.
pub fn build_nsp_pair<R: Rng + ?Sized>(
    dialogues: &[Dialogue],
    index: usize,
    encoder: &PairEncoder<'_>,
    rng: &mut R,
    branch: Option<NspBranch>,
) -> Result<(EncodedInput, u8)> {
    if dialogues.len() < 2 {
        return Err(Error::Input("next-response pairs need at least 2 dialogues".into()));
    }
    let dialogue = &dialogues[index];
    let branch = branch.unwrap_or_else(|| {
        if rng.random_bool(0.5) {
            NspBranch::Positive
        } else {
            NspBranch::Negative
        }
    });
    match branch {
        NspBranch::Positive => Ok((encoder.encode(&dialogue.context, &dialogue.response)?, 1)),
        NspBranch::Negative => {
            let truth = &dialogue.response.text;
            if dialogues.iter().all(|d| &d.response.text == truth) {
                return Err(Error::Input("every response in the corpus is identical".into()));
            }
            let other = loop {
                let j = rng.random_range(0..dialogues.len());
                if j != index && &dialogues[j].response.text != truth {
                    break &dialogues[j].response;
                }
            };
            let negative = Utterance {
                index: dialogue.response.index,
                spoken_from: dialogue.response.spoken_from.clone(),
                spoken_to: dialogue.response.spoken_to.clone(),
                text: other.text.clone(),
            };
            Ok((encoder.encode(&dialogue.context, &negative)?, 0))
        }
    }
}
