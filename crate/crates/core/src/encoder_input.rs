//! Assembly of the four parallel id tracks fed to the encoder.
//!
//! Layout: `[CLS] <context> [SEP] <response> [SEP] [PAD]...`. Every context
//! utterance ends with `[EOU]`, and the last utterance of each turn (a maximal run
//! of one speaker) additionally ends with `[EOT]`. Speaker-role ids come from the
//! context roles and the response role; structural tokens carry role 0.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::disentangle::{self, ROLE_FROM, ROLE_NONE};
use crate::error::{Error, Result};
use crate::tokenizer::{Vocabulary, CLS, EOT, EOU, PAD, SEP};

/// The response is never truncated below this many tokens.
pub const RESPONSE_FLOOR: usize = 8;
pub const MIN_MAX_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInput {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub speaker_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Aligned column dump of all tracks, one row per position.
    pub fn inspect(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>4}  {:<16} {:>7} {:>3} {:>3} {:>4}", "pos", "token", "id", "seg", "spk", "mask");
        for i in 0..self.len() {
            let tok = vocab.token(self.token_ids[i]).unwrap_or("<?>");
            let _ = writeln!(
                out,
                "{:>4}  {:<16} {:>7} {:>3} {:>3} {:>4}",
                self.position_ids[i], tok, self.token_ids[i], self.segment_ids[i], self.speaker_ids[i], self.attention_mask[i]
            );
        }
        out
    }
}

/// Tokenizes each utterance and appends `[EOU]`, plus `[EOT]` at turn ends.
/// The markers inherit the utterance's role id.
pub fn mark_turns(context: &[(Utterance, usize)], vocab: &Vocabulary) -> Vec<(Vec<usize>, usize)> {
    context
        .iter()
        .enumerate()
        .map(|(i, (utt, role))| {
            let mut ids = vocab.tokenize(&utt.text);
            ids.push(EOU);
            let turn_ends = context
                .get(i + 1)
                .is_none_or(|(next, _)| next.spoken_from != utt.spoken_from);
            if turn_ends {
                ids.push(EOT);
            }
            (ids, *role)
        })
        .collect()
}

/// Fits context and response into `max_len` positions alongside `[CLS]` and two `[SEP]`s.
///
/// Context is dropped from the front first; only once it is exhausted is the
/// response cut from the tail, and never below [`RESPONSE_FLOOR`] tokens.
pub fn trim_to_budget<T: Clone>(context: &[T], response: &[T], max_len: usize) -> Result<(Vec<T>, Vec<T>)> {
    let budget = max_len
        .checked_sub(3)
        .ok_or_else(|| Error::Input(format!("max_len {max_len} leaves no room for [CLS] and [SEP]s")))?;
    let total = context.len() + response.len();
    if total <= budget {
        return Ok((context.to_vec(), response.to_vec()));
    }
    let overflow = total - budget;
    let drop_ctx = overflow.min(context.len());
    let rest = overflow - drop_ctx;
    let keep_resp = response.len() - rest;
    if rest > 0 && keep_resp < RESPONSE_FLOOR {
        return Err(Error::Input(format!(
            "response of {} tokens cannot fit in max_len {max_len} without dropping below {RESPONSE_FLOOR} tokens",
            response.len()
        )));
    }
    Ok((context[drop_ctx..].to_vec(), response[..keep_resp].to_vec()))
}

/// Builds the padded input for one context/response pair.
pub fn build_input(
    context: &[(Utterance, usize)],
    response: &Utterance,
    response_role: usize,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedInput> {
    if max_len < MIN_MAX_LEN {
        return Err(Error::Config(format!("max_len must be at least {MIN_MAX_LEN}, got {max_len}")));
    }
    if context.is_empty() {
        return Err(Error::Input("context must hold at least one utterance".into()));
    }
    let ctx: Vec<(usize, usize)> = mark_turns(context, vocab)
        .into_iter()
        .flat_map(|(ids, role)| ids.into_iter().map(move |id| (id, role)))
        .collect();
    let resp: Vec<(usize, usize)> = vocab.tokenize(&response.text).into_iter().map(|id| (id, response_role)).collect();
    if resp.is_empty() {
        return Err(Error::Input("response has no tokens".into()));
    }
    let (ctx, resp) = trim_to_budget(&ctx, &resp, max_len)?;

    let mut input = EncodedInput {
        token_ids: Vec::with_capacity(max_len),
        segment_ids: Vec::with_capacity(max_len),
        position_ids: (0..max_len).collect(),
        speaker_ids: Vec::with_capacity(max_len),
        attention_mask: vec![0; max_len],
    };
    let mut push = |tok: usize, seg: usize, spk: usize| {
        input.token_ids.push(tok);
        input.segment_ids.push(seg);
        input.speaker_ids.push(spk);
    };
    push(CLS, 0, ROLE_NONE);
    for &(tok, role) in &ctx {
        push(tok, 0, role);
    }
    push(SEP, 0, ROLE_NONE);
    for &(tok, role) in &resp {
        push(tok, 1, role);
    }
    push(SEP, 1, ROLE_NONE);
    let active = input.token_ids.len();
    input.attention_mask[..active].fill(1);
    input.token_ids.resize(max_len, PAD);
    input.segment_ids.resize(max_len, 0);
    input.speaker_ids.resize(max_len, ROLE_NONE);
    Ok(input)
}

/// Role ids by order of first appearance (first speaker 1, second 2, ...). When a
/// conversation has more speakers than the table has rows, ids wrap around.
pub fn alternation_roles<'a>(context: &'a [Utterance], response: &'a Utterance, num_speaker_roles: usize) -> (Vec<usize>, usize) {
    let rows = num_speaker_roles.saturating_sub(1).max(1);
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut role_of = |speaker: &'a str| {
        let next = seen.len();
        let order = *seen.entry(speaker).or_insert(next);
        1 + order % rows
    };
    let roles = context.iter().map(|u| role_of(&u.spoken_from)).collect();
    let response_role = role_of(&response.spoken_from);
    (roles, response_role)
}

/// How context roles are derived from speaker labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ContextMode {
    /// Keep the whole context; roles by first-appearance alternation.
    Alternation,
    /// Speaker-aware filtering towards the response speaker, capped to the most
    /// recent `max_utterances`.
    Disentangle { max_utterances: usize },
}

/// Encodes context/response pairs under one fixed configuration.
#[derive(Debug, Clone)]
pub struct PairEncoder<'a> {
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
    pub num_speaker_roles: usize,
    pub mode: ContextMode,
}

impl<'a> PairEncoder<'a> {
    pub fn new(vocab: &'a Vocabulary, max_len: usize, num_speaker_roles: usize, mode: ContextMode) -> Self {
        PairEncoder {
            vocab,
            max_len,
            num_speaker_roles,
            mode,
        }
    }

    /// Role-tagged context and response role for a pair.
    pub fn roles(&self, context: &[Utterance], response: &Utterance) -> (Vec<(Utterance, usize)>, usize) {
        if let ContextMode::Disentangle { max_utterances } = self.mode {
            let filtered = disentangle::disentangled_context(context, &response.spoken_from, max_utterances);
            if !filtered.is_empty() {
                return (filtered, ROLE_FROM);
            }
        }
        // Alternation is also the fallback when filtering leaves nothing.
        let (roles, response_role) = alternation_roles(context, response, self.num_speaker_roles);
        (context.iter().cloned().zip(roles).collect(), response_role)
    }

    pub fn encode(&self, context: &[Utterance], response: &Utterance) -> Result<EncodedInput> {
        let (tagged, response_role) = self.roles(context, response);
        build_input(&tagged, response, response_role, self.vocab, self.max_len)
    }
}
