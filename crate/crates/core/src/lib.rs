//! Speaker-aware multi-turn response selection.
//!
//! The pipeline runs from raw dialogue files to ranked candidate pools:
//!
//! * [`corpus`] reads TSV and JSONL dialogue data and labels speakers.
//! * [`disentangle`] filters entangled multi-party channels down to the
//!   utterances relevant to one response speaker.
//! * [`tokenizer`] builds a word-level vocabulary with fixed special tokens.
//! * [`encoder_input`] lays out `[CLS] context [SEP] response [SEP]` with turn
//!   markers and parallel segment, position and speaker-role tracks.
//! * [`model`] is a from-scratch transformer encoder with masked-token,
//!   next-response and matching heads, and exact backpropagation.
//! * [`training`] runs domain adaptation (masked tokens plus next-response
//!   prediction) followed by matching fine-tuning.
//! * [`eval`] ranks candidate pools and computes R_n@k, MAP, MRR and P@1, plus
//!   a no-answer threshold sweep.
//! * [`cli`] ties the stages together behind the `turnrank` binary.

pub mod cli;
pub mod corpus;
pub mod disentangle;
pub mod encoder_input;
pub mod error;
pub mod eval;
pub mod model;
pub mod synthetic;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
