//! Command-line front end: `turnrank <command> [--flags]`.
//!
//! Every run writes one [`manifest::RunManifest`] recording the resolved
//! invocation, the effective configuration and content hashes of every input and
//! output; `turnrank replay` re-executes a manifest and checks the outputs are
//! reproduced byte for byte.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (non-finite values, divergence, replay mismatch).

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use commands::{execute, RunRecord};
use manifest::{unix_now, RunManifest, MANIFEST_FORMAT, MANIFEST_VERSION};

#[derive(Debug, Parser)]
#[command(name = "turnrank", version, about = "Speaker-aware multi-turn response selection")]
pub struct Cli {
    /// Directory searched for named configs (falls back to $TURNRANK_CONFIG_DIR, then ./configs).
    #[arg(long, global = true, value_name = "DIR")]
    pub config_dir: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the first output).
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build a vocabulary file from one or more corpus files.
    BuildVocab(BuildVocabArgs),
    /// Filter a channel to the utterances relevant to one speaker.
    Disentangle(DisentangleArgs),
    /// Encode examples or pools into model inputs.
    Encode(EncodeArgs),
    /// Domain adaptation with masked tokens and next-response prediction.
    Adapt(AdaptArgs),
    /// Fine-tune the matching head on labelled pairs.
    Finetune(FinetuneArgs),
    /// Rank candidate pools and report retrieval metrics.
    Evaluate(EvaluateArgs),
    /// Re-run a recorded manifest and compare outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BuildVocabArgs {
    /// Corpus file (TSV, or JSONL examples, pools or channel); repeatable.
    #[arg(long = "input", value_name = "PATH", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Vocabulary file to write, one token per line.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Minimum token count.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Maximum vocabulary size, special tokens included.
    #[arg(long, default_value_t = 30_000)]
    pub max_size: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DisentangleArgs {
    /// Channel JSONL, one utterance per line.
    #[arg(long, value_name = "PATH")]
    pub channel: PathBuf,
    /// Target (response) speaker.
    #[arg(long)]
    pub speaker: String,
    /// Keep at most this many of the most recent selected utterances.
    #[arg(long, default_value_t = crate::disentangle::DEFAULT_MAX_UTTERANCES)]
    pub cap: usize,
    /// Read `name:` / `name,` prefixes as addressees when `to` is absent.
    #[arg(long)]
    pub infer_addressees: bool,
    /// Filtered JSONL with a `role` field per utterance.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EncodeArgs {
    /// Examples or pools (TSV or JSONL).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    /// Config file path or name under the config directory.
    #[arg(long, value_name = "PATH|NAME")]
    pub config: Option<String>,
    /// Print the id tracks of every input in aligned columns.
    #[arg(long)]
    pub inspect: bool,
    /// Encode only the first N inputs.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
    /// Use alternation roles over the whole context.
    #[arg(long)]
    pub no_disentangle: bool,
    /// JSONL of encoded inputs.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training data: examples or pools (TSV or JSONL).
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    /// Config file path or name under the config directory.
    #[arg(long, value_name = "PATH|NAME")]
    pub config: Option<String>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long, value_name = "PATH")]
    pub checkpoint_in: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint_out: PathBuf,
    /// Per-step CSV loss log (default: <checkpoint-out>.loss.csv).
    #[arg(long, value_name = "PATH")]
    pub loss_log: Option<PathBuf>,
    /// Validation data for checkpoint selection.
    #[arg(long, value_name = "PATH")]
    pub valid: Option<PathBuf>,
    /// Overrides the configured training and initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured step cap.
    #[arg(long, value_name = "N")]
    pub max_steps: Option<usize>,
    /// Zero the speaker-role table and keep it frozen.
    #[arg(long)]
    pub no_speaker_embeddings: bool,
    /// Use alternation roles over the whole context.
    #[arg(long)]
    pub no_disentangle: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Start from a fresh initialization even if --checkpoint-in is given.
    #[arg(long)]
    pub no_adaptation: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Candidate pools (JSONL, or TSV grouped by shared context).
    #[arg(long, value_name = "PATH")]
    pub pools: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub vocab: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Config file path or name under the config directory.
    #[arg(long, value_name = "PATH|NAME")]
    pub config: Option<String>,
    /// Recall cutoffs as n:k pairs, e.g. `10:1,10:2,10:5,2:1`.
    #[arg(long, value_name = "LIST")]
    pub cutoffs: Option<String>,
    /// Choose a no-answer threshold from the grid and report it.
    #[arg(long)]
    pub threshold_sweep: bool,
    /// Comma-separated threshold grid (default 0.60..0.95 in steps of 0.05).
    #[arg(long, value_name = "LIST")]
    pub threshold_grid: Option<String>,
    /// Pools on which the threshold is chosen (default: the evaluated pools).
    #[arg(long, value_name = "PATH")]
    pub valid: Option<PathBuf>,
    /// Fail on pools without a positive candidate instead of skipping them.
    #[arg(long)]
    pub strict: bool,
    /// Use alternation roles over the whole context.
    #[arg(long)]
    pub no_disentangle: bool,
    /// Write the key=value report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write per-pool scores and labels as JSONL.
    #[arg(long, value_name = "PATH")]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest to replay.
    #[arg(long, value_name = "PATH")]
    pub from: PathBuf,
    /// Directory receiving the replayed outputs.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

fn absolute(path: &mut PathBuf) -> Result<()> {
    *path = std::path::absolute(&*path).map_err(|e| Error::io(path.clone(), e))?;
    Ok(())
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildVocab(_) => "build-vocab",
            Command::Disentangle(_) => "disentangle",
            Command::Encode(_) => "encode",
            Command::Adapt(_) => "adapt",
            Command::Finetune(_) => "finetune",
            Command::Evaluate(_) => "evaluate",
            Command::Replay(_) => "replay",
        }
    }

    /// Every output path the command may write.
    pub fn outputs_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            Command::BuildVocab(a) => vec![&mut a.out],
            Command::Disentangle(a) => vec![&mut a.out],
            Command::Encode(a) => a.out.iter_mut().collect(),
            Command::Adapt(AdaptArgs { train }) | Command::Finetune(FinetuneArgs { train, .. }) => {
                let mut v = vec![&mut train.checkpoint_out];
                v.extend(train.loss_log.iter_mut());
                v
            }
            Command::Evaluate(a) => a.out.iter_mut().chain(a.scores_out.iter_mut()).collect(),
            Command::Replay(a) => vec![&mut a.out_dir],
        }
    }

    fn inputs_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            Command::BuildVocab(a) => a.inputs.iter_mut().collect(),
            Command::Disentangle(a) => vec![&mut a.channel],
            Command::Encode(a) => vec![&mut a.data, &mut a.vocab],
            Command::Adapt(AdaptArgs { train }) | Command::Finetune(FinetuneArgs { train, .. }) => {
                let mut v = vec![&mut train.data, &mut train.vocab];
                v.extend(train.checkpoint_in.iter_mut());
                v.extend(train.valid.iter_mut());
                v
            }
            Command::Evaluate(a) => {
                let mut v = vec![&mut a.pools, &mut a.vocab, &mut a.checkpoint];
                v.extend(a.valid.iter_mut());
                v
            }
            Command::Replay(a) => vec![&mut a.from],
        }
    }

    /// Rewrites every path as absolute so a manifest is valid from any directory.
    pub fn absolutized(mut self) -> Result<Self> {
        for p in self.inputs_mut() {
            absolute(p)?;
        }
        for p in self.outputs_mut() {
            absolute(p)?;
        }
        Ok(self)
    }
}

fn default_manifest_path(record: &RunRecord) -> PathBuf {
    let (base, suffix) = match (record.outputs.first(), record.inputs.first()) {
        (Some(out), _) => (out.path.clone(), "manifest.json".to_string()),
        (None, Some(input)) => (input.path.clone(), format!("{}.manifest.json", record.invocation.name())),
        (None, None) => (PathBuf::from("turnrank"), "manifest.json".to_string()),
    };
    let mut name = base.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    base.with_file_name(name)
}

/// Runs a parsed command line and writes its manifest.
pub fn run(cli: Cli) -> Result<RunManifest> {
    let dir = config::config_dir(cli.config_dir.as_deref());
    let started_unix = unix_now();
    let command = cli.command.absolutized()?;
    let record = execute(&command, &dir)?;
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: record.invocation.name().into(),
        invocation: record.invocation.clone(),
        config_path: record.config_path.clone(),
        config: record.config.clone(),
        seed: record.seed,
        inputs: record.inputs.clone(),
        outputs: record.outputs.clone(),
        started_unix,
        finished_unix: unix_now(),
    };
    let path = cli.manifest.unwrap_or_else(|| default_manifest_path(&record));
    manifest.save(&path)?;
    Ok(manifest)
}

/// Entry point: parses `args` (program name first) and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn manifest_path_defaults() {
        let record = RunRecord {
            invocation: Command::Replay(ReplayArgs {
                from: "/a/m.json".into(),
                out_dir: "/b".into(),
            }),
            config_path: None,
            config: None,
            seed: None,
            inputs: vec![],
            outputs: vec![manifest::FileDigest {
                path: "/x/model.json".into(),
                sha256: String::new(),
            }],
        };
        assert_eq!(default_manifest_path(&record), PathBuf::from("/x/model.json.manifest.json"));
    }
}
