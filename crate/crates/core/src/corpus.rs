//! Ingestion of dialogue corpora.
//!
//! Two on-disk shapes are understood:
//!
//! * Ubuntu-style TSV: `label \t utt_1 \t ... \t utt_m \t response`, one example per line.
//!   These corpora carry no speaker labels, so speakers are assigned by strict
//!   alternation (`spk_A`, `spk_B`, `spk_A`, ...) starting at the first utterance.
//! * JSONL, one object per line. A channel record is
//!   `{"index": 0, "from": "alice", "to": null, "text": "..."}`; a candidate pool is
//!   `{"context": [<channel records>], "candidates": [{"text", "from", "to"?, "label"}]}`;
//!   a labelled example is `{"context": [...], "response": <channel record>, "label": 0|1}`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEAKER_A: &str = "spk_A";
pub const SPEAKER_B: &str = "spk_B";

/// One message in a channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    #[serde(rename = "from")]
    pub spoken_from: String,
    #[serde(rename = "to", default)]
    pub spoken_to: Option<String>,
    pub text: String,
}

impl Utterance {
    pub fn new(index: usize, spoken_from: impl Into<String>, text: impl Into<String>) -> Self {
        Utterance {
            index,
            spoken_from: spoken_from.into(),
            spoken_to: None,
            text: text.into(),
        }
    }

    pub fn addressed_to(mut self, speaker: impl Into<String>) -> Self {
        self.spoken_to = Some(speaker.into());
        self
    }
}

/// A `(context, response, label)` triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueExample {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub label: u8,
}

impl DialogueExample {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("example serializes")
    }

    pub fn from_jsonl(line: &str, record: usize) -> Result<Self> {
        let example: DialogueExample =
            serde_json::from_str(line).map_err(|e| schema(record, e.to_string()))?;
        if example.label > 1 {
            return Err(schema(record, format!("label must be 0 or 1, got {}", example.label)));
        }
        validate_utterances(&example.context, record)?;
        check_speaker(&example.response, record)?;
        Ok(example)
    }
}

/// A context with a set of scored-later candidate responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    pub context: Vec<Utterance>,
    pub candidates: Vec<(Utterance, u8)>,
}

impl CandidatePool {
    pub fn new(context: Vec<Utterance>, candidates: Vec<(Utterance, u8)>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Input("candidate pool has no candidates".into()));
        }
        Ok(CandidatePool {
            context,
            candidates,
        })
    }

    pub fn has_answer(&self) -> bool {
        self.candidates.iter().any(|(_, label)| *label == 1)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|(_, l)| *l).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let record = PoolRecord {
            context: self.context.clone(),
            candidates: self
                .candidates
                .iter()
                .map(|(u, label)| CandidateRecord {
                    text: u.text.clone(),
                    from: u.spoken_from.clone(),
                    to: u.spoken_to.clone(),
                    label: *label,
                })
                .collect(),
        };
        serde_json::to_string(&record).expect("pool serializes")
    }

    pub fn from_jsonl(line: &str, record: usize) -> Result<Self> {
        let raw: PoolRecord =
            serde_json::from_str(line).map_err(|e| schema(record, e.to_string()))?;
        validate_utterances(&raw.context, record)?;
        let next_index = raw.context.last().map_or(0, |u| u.index + 1);
        let mut candidates = Vec::with_capacity(raw.candidates.len());
        for c in raw.candidates {
            if c.label > 1 {
                return Err(schema(record, format!("candidate label must be 0 or 1, got {}", c.label)));
            }
            let utt = Utterance {
                index: next_index,
                spoken_from: c.from,
                spoken_to: c.to,
                text: c.text,
            };
            check_speaker(&utt, record)?;
            candidates.push((utt, c.label));
        }
        CandidatePool::new(raw.context, candidates).map_err(|e| schema(record, e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct PoolRecord {
    context: Vec<Utterance>,
    candidates: Vec<CandidateRecord>,
}

#[derive(Serialize, Deserialize)]
struct CandidateRecord {
    text: String,
    from: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    to: Option<String>,
    label: u8,
}

fn schema(record: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        record,
        message: message.into(),
    }
}

fn check_speaker(u: &Utterance, record: usize) -> Result<()> {
    if u.spoken_from.is_empty() {
        return Err(schema(record, format!("utterance {} has an empty speaker", u.index)));
    }
    Ok(())
}

fn validate_utterances(utterances: &[Utterance], record: usize) -> Result<()> {
    for u in utterances {
        check_speaker(u, record)?;
    }
    for pair in utterances.windows(2) {
        if pair[1].index <= pair[0].index {
            return Err(schema(
                record,
                format!("index {} does not increase after {}", pair[1].index, pair[0].index),
            ));
        }
    }
    Ok(())
}

/// Speaker of the utterance at `position` under strict two-party alternation.
pub fn alternating_speaker(position: usize) -> &'static str {
    if position.is_multiple_of(2) {
        SPEAKER_A
    } else {
        SPEAKER_B
    }
}

/// Parses one TSV example. `line_number` is 1-based and only used for errors.
pub fn parse_tsv_example(line: &str, line_number: usize) -> Result<DialogueExample> {
    let line = line.trim_end_matches(['\r', '\n']);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 3 {
        return Err(Error::Parse {
            line: line_number,
            message: format!("expected at least 3 tab-separated fields, found {}", fields.len()),
        });
    }
    let label = match fields[0].trim() {
        "0" => 0,
        "1" => 1,
        other => {
            return Err(Error::Parse {
                line: line_number,
                message: format!("label must be 0 or 1, got {other:?}"),
            })
        }
    };
    let (response, context) = fields[1..].split_last().expect("at least two fields");
    let context = context
        .iter()
        .enumerate()
        .map(|(i, text)| Utterance::new(i, alternating_speaker(i), *text))
        .collect::<Vec<_>>();
    let m = context.len();
    Ok(DialogueExample {
        context,
        response: Utterance::new(m, alternating_speaker(m), *response),
        label,
    })
}

/// Renders an example back into the TSV line format.
pub fn to_tsv_line(example: &DialogueExample) -> String {
    let mut fields = vec![example.label.to_string()];
    fields.extend(example.context.iter().map(|u| u.text.clone()));
    fields.push(example.response.text.clone());
    fields.join("\t")
}

/// Detects an IRC-style address prefix (`name:` or `name,`) naming a known speaker.
///
/// Returns the addressee and the text with the prefix removed; when no known
/// addressee is found the text is returned untouched.
pub fn extract_spoken_to(text: &str, known_speakers: &HashSet<String>) -> (Option<String>, String) {
    if let Some(pos) = text.find([':', ',']) {
        let name = &text[..pos];
        if !name.is_empty() && known_speakers.contains(name) {
            let rest = text[pos + 1..].trim_start();
            return (Some(name.to_string()), rest.to_string());
        }
    }
    (None, text.to_string())
}

/// Fills in missing `spoken_to` labels from address prefixes, using the channel's
/// own speakers as the known set.
pub fn annotate_addressees(channel: &mut [Utterance]) {
    let known: HashSet<String> = channel.iter().map(|u| u.spoken_from.clone()).collect();
    for u in channel.iter_mut().filter(|u| u.spoken_to.is_none()) {
        let (to, rest) = extract_spoken_to(&u.text, &known);
        if to.is_some() {
            u.spoken_to = to;
            u.text = rest;
        }
    }
}

/// Groups consecutive examples that share a context into candidate pools, the
/// layout Ubuntu-style test files use (one positive followed by its negatives).
pub fn group_into_pools(examples: Vec<DialogueExample>) -> Vec<CandidatePool> {
    let mut pools: Vec<CandidatePool> = Vec::new();
    for ex in examples {
        match pools.last_mut() {
            Some(pool) if contexts_match(&pool.context, &ex.context) => {
                pool.candidates.push((ex.response, ex.label));
            }
            _ => pools.push(CandidatePool {
                context: ex.context,
                candidates: vec![(ex.response, ex.label)],
            }),
        }
    }
    pools
}

fn contexts_match(a: &[Utterance], b: &[Utterance]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.text == y.text && x.spoken_from == y.spoken_from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown format {other:?} (expected tsv or jsonl)"))),
        }
    }
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Tsv,
        }
    }
}

/// Parsed contents of a corpus file.
#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Examples(Vec<DialogueExample>),
    Pools(Vec<CandidatePool>),
    Channel(Vec<Utterance>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Examples(v) => v.len(),
            Records::Pools(v) => v.len(),
            Records::Channel(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a corpus file in file order. JSONL files are classified by their first
/// record: `candidates` marks pools, `response` marks labelled examples, anything
/// else is read as a channel.
pub fn load_channel(path: &Path, format: Format) -> Result<Records> {
    let text = read(path)?;
    match format {
        Format::Tsv => parse_tsv(&text).map(Records::Examples),
        Format::Jsonl => parse_jsonl(&text),
    }
}

pub fn parse_tsv(text: &str) -> Result<Vec<DialogueExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_tsv_example(l, i + 1))
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<Records> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let Some(&(first_no, first)) = lines.first() else {
        return Ok(Records::Channel(Vec::new()));
    };
    let probe: serde_json::Value =
        serde_json::from_str(first).map_err(|e| schema(first_no, e.to_string()))?;
    if probe.get("candidates").is_some() {
        lines
            .iter()
            .map(|&(n, l)| CandidatePool::from_jsonl(l, n))
            .collect::<Result<_>>()
            .map(Records::Pools)
    } else if probe.get("response").is_some() {
        lines
            .iter()
            .map(|&(n, l)| DialogueExample::from_jsonl(l, n))
            .collect::<Result<_>>()
            .map(Records::Examples)
    } else {
        parse_channel_lines(&lines).map(Records::Channel)
    }
}

fn parse_channel_lines(lines: &[(usize, &str)]) -> Result<Vec<Utterance>> {
    let mut channel: Vec<Utterance> = Vec::with_capacity(lines.len());
    for &(n, line) in lines {
        let u: Utterance = serde_json::from_str(line).map_err(|e| schema(n, e.to_string()))?;
        check_speaker(&u, n)?;
        if let Some(prev) = channel.last() {
            if u.index <= prev.index {
                return Err(schema(
                    n,
                    format!("index {} does not increase after {}", u.index, prev.index),
                ));
            }
        }
        channel.push(u);
    }
    Ok(channel)
}

pub fn load_examples(path: &Path) -> Result<Vec<DialogueExample>> {
    match load_channel(path, Format::from_path(path))? {
        Records::Examples(v) => Ok(v),
        Records::Channel(v) if v.is_empty() => Ok(Vec::new()),
        _ => Err(schema(1, format!("{} does not hold labelled examples", path.display()))),
    }
}

/// Loads candidate pools from JSONL, or from TSV by grouping shared contexts.
pub fn load_pools(path: &Path) -> Result<Vec<CandidatePool>> {
    match load_channel(path, Format::from_path(path))? {
        Records::Pools(v) => Ok(v),
        Records::Examples(v) => Ok(group_into_pools(v)),
        Records::Channel(v) if v.is_empty() => Ok(Vec::new()),
        Records::Channel(_) => Err(schema(1, format!("{} holds a channel, not pools", path.display()))),
    }
}

pub fn load_utterances(path: &Path) -> Result<Vec<Utterance>> {
    match load_channel(path, Format::Jsonl)? {
        Records::Channel(v) => Ok(v),
        _ => Err(schema(1, format!("{} is not a channel file", path.display()))),
    }
}

pub fn channel_to_jsonl(channel: &[Utterance]) -> String {
    let mut out = String::new();
    for u in channel {
        out.push_str(&serde_json::to_string(u).expect("utterance serializes"));
        out.push('\n');
    }
    out
}
