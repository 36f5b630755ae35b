//! Speaker-aware filtering of entangled multi-party channels.
//!
//! Given the speaker of a candidate response, only utterances spoken by that
//! speaker or addressed to that speaker are kept, in channel order. The two
//! selection routes map onto the two speaker embedding rows.

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;

/// Default number of utterances kept after filtering.
pub const DEFAULT_MAX_UTTERANCES: usize = 25;

/// Speaker-role row reserved for structural tokens ([CLS], [SEP], [PAD]).
pub const ROLE_NONE: usize = 0;
pub const ROLE_FROM: usize = 1;
pub const ROLE_TO: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Spoken by the target speaker.
    FromMatch,
    /// Addressed to the target speaker.
    ToMatch,
}

impl Role {
    pub fn id(self) -> usize {
        match self {
            Role::FromMatch => ROLE_FROM,
            Role::ToMatch => ROLE_TO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredContext {
    pub target_speaker: String,
    pub utterances: Vec<(Utterance, Role)>,
}

impl FilteredContext {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn to_channel(&self) -> Vec<Utterance> {
        self.utterances.iter().map(|(u, _)| u.clone()).collect()
    }
}

fn role_for(u: &Utterance, target: &str) -> Option<Role> {
    if u.spoken_from == target {
        Some(Role::FromMatch)
    } else if u.spoken_to.as_deref() == Some(target) {
        Some(Role::ToMatch)
    } else {
        None
    }
}

/// Selects the utterances relevant to `response_speaker`.
///
/// When an utterance is both spoken by and addressed to the target, it is tagged
/// [`Role::FromMatch`].
pub fn filter_channel(channel: &[Utterance], response_speaker: &str) -> FilteredContext {
    let utterances = channel
        .iter()
        .filter_map(|u| role_for(u, response_speaker).map(|role| (u.clone(), role)))
        .collect();
    FilteredContext {
        target_speaker: response_speaker.to_string(),
        utterances,
    }
}

pub fn assign_speaker_roles(filtered: &FilteredContext) -> Vec<usize> {
    filtered.utterances.iter().map(|(_, role)| role.id()).collect()
}

/// Keeps the `max_utterances` most recent entries.
pub fn cap_context(mut filtered: FilteredContext, max_utterances: usize) -> FilteredContext {
    let max_utterances = max_utterances.max(1);
    let len = filtered.utterances.len();
    if len > max_utterances {
        filtered.utterances.drain(..len - max_utterances);
    }
    filtered
}

/// Filter, cap and role-tag in one step; returns context/role pairs ready for encoding.
pub fn disentangled_context(
    channel: &[Utterance],
    response_speaker: &str,
    max_utterances: usize,
) -> Vec<(Utterance, usize)> {
    let capped = cap_context(filter_channel(channel, response_speaker), max_utterances);
    capped
        .utterances
        .into_iter()
        .map(|(u, role)| (u, role.id()))
        .collect()
}
