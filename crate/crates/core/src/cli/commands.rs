use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use super::config::{resolve, PipelineConfig};
use super::manifest::{FileDigest, RunManifest};
use super::*;
use crate::corpus::{self, annotate_addressees, load_channel, load_pools, CandidatePool, DialogueExample, Format, Records, Utterance};
use crate::disentangle::{cap_context, filter_channel};
use crate::encoder_input::PairEncoder;
use crate::error::{Error, Result};
use crate::eval::{evaluate, no_answer_recall_at_1, select_threshold, threshold_sweep, EvalMode, RankedPool};
use crate::model::Model;
use crate::tokenizer::Vocabulary;
use crate::training::{
    adaptation_validation_set, dialogues_from_examples, encode_examples, encode_pools, loss_log_csv,
    rank_encoded_pools, train, Dialogue, TrainConfig, TrainData, TrainOutcome, Validation,
};

/// What a command read and wrote, for its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// The invocation with defaults and the config path resolved.
    pub invocation: Command,
    pub config_path: Option<PathBuf>,
    pub config: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunRecord {
    fn new(invocation: Command) -> Self {
        RunRecord {
            invocation,
            config_path: None,
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn with_config(mut self, config: &PipelineConfig, path: Option<PathBuf>) -> Self {
        self.config = Some(serde_json::to_value(config).expect("config serializes"));
        self.config_path = path;
        self
    }

    fn digest(paths: &[&Path]) -> Result<Vec<FileDigest>> {
        paths.iter().map(|p| FileDigest::of(p)).collect()
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn record_texts(records: &Records) -> Vec<String> {
    let utterances: Box<dyn Iterator<Item = &Utterance>> = match records {
        Records::Examples(v) => Box::new(v.iter().flat_map(|e| e.context.iter().chain([&e.response]))),
        Records::Pools(v) => Box::new(v.iter().flat_map(|p| p.context.iter().chain(p.candidates.iter().map(|(c, _)| c)))),
        Records::Channel(v) => Box::new(v.iter()),
    };
    utterances.map(|u| u.text.clone()).collect()
}

fn load_records(path: &Path) -> Result<Records> {
    load_channel(path, Format::from_path(path))
}

/// Labelled pairs; pools are flattened into one example per candidate.
fn labelled_examples(path: &Path) -> Result<Vec<DialogueExample>> {
    let examples = match load_records(path)? {
        Records::Examples(v) => v,
        Records::Pools(pools) => pools
            .into_iter()
            .flat_map(|p| {
                let context = p.context;
                p.candidates.into_iter().map(move |(response, label)| DialogueExample {
                    context: context.clone(),
                    response,
                    label,
                })
            })
            .collect(),
        Records::Channel(_) => {
            return Err(Error::Input(format!("{} holds a channel, not labelled pairs", path.display())))
        }
    };
    if examples.is_empty() {
        return Err(Error::Input(format!("{} holds no examples", path.display())));
    }
    Ok(examples)
}

fn pools_of(path: &Path) -> Result<Vec<CandidatePool>> {
    let pools = load_pools(path)?;
    if pools.is_empty() {
        return Err(Error::Input(format!("{} holds no pools", path.display())));
    }
    Ok(pools)
}

fn adaptation_dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    Ok(dialogues_from_examples(&labelled_examples(path)?))
}

fn resolved_config(requested: &Option<String>, dir: &Path) -> Result<(PipelineConfig, Option<PathBuf>, Option<String>)> {
    let (config, path) = resolve(requested.as_deref(), dir)?;
    let path = path.map(|p| std::path::absolute(&p).unwrap_or(p));
    let as_arg = path.as_ref().map(|p| p.display().to_string());
    Ok((config, path, as_arg))
}

fn check_vocab(model: &Model, vocab: &Vocabulary) -> Result<()> {
    if model.config.vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {} tokens but the vocabulary has {}",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

fn parse_cutoffs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|pair| {
            let (n, k) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("cutoff {pair:?} is not of the form n:k")))?;
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| Error::Config(format!("cutoff {pair:?}: {e}")));
            Ok((parse(n)?, parse(k)?))
        })
        .collect()
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Config(format!("threshold {v:?}: {e}"))))
        .collect()
}

/// Runs one command. Paths are used as given; [`run`] makes them absolute first.
pub fn execute(command: &Command, config_dir: &Path) -> Result<RunRecord> {
    match command {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Disentangle(a) => disentangle(a),
        Command::Encode(a) => encode(a, config_dir),
        Command::Adapt(a) => train_command(&a.train, false, config_dir, true),
        Command::Finetune(a) => train_command(&a.train, a.no_adaptation, config_dir, false),
        Command::Evaluate(a) => evaluate_command(a, config_dir),
        Command::Replay(a) => replay(a, config_dir),
    }
}

fn build_vocab(a: &BuildVocabArgs) -> Result<RunRecord> {
    let mut texts = Vec::new();
    for path in &a.inputs {
        texts.extend(record_texts(&load_records(path)?));
    }
    let vocab = Vocabulary::build(&texts, a.min_count, a.max_size)?;
    vocab.save(&a.out)?;
    println!("wrote {} tokens to {}", vocab.len(), a.out.display());
    let mut record = RunRecord::new(Command::BuildVocab(a.clone()));
    record.inputs = RunRecord::digest(&a.inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    record.outputs = RunRecord::digest(&[&a.out])?;
    Ok(record)
}

#[derive(Serialize)]
struct RoleRecord<'a> {
    #[serde(flatten)]
    utterance: &'a Utterance,
    role: usize,
}

fn disentangle(a: &DisentangleArgs) -> Result<RunRecord> {
    if a.cap == 0 {
        return Err(Error::Config("--cap must be at least 1".into()));
    }
    let mut channel = corpus::load_utterances(&a.channel)?;
    if a.infer_addressees {
        annotate_addressees(&mut channel);
    }
    let filtered = cap_context(filter_channel(&channel, &a.speaker), a.cap);
    if filtered.is_empty() {
        warn!(
            "no utterance in {} involves speaker {:?}; writing an empty file",
            a.channel.display(),
            a.speaker
        );
    }
    let mut out = String::new();
    for (u, role) in &filtered.utterances {
        out.push_str(&serde_json::to_string(&RoleRecord { utterance: u, role: role.id() }).expect("record serializes"));
        out.push('\n');
    }
    write(&a.out, &out)?;
    println!("kept {} of {} utterances", filtered.len(), channel.len());
    let mut record = RunRecord::new(Command::Disentangle(a.clone()));
    record.inputs = RunRecord::digest(&[&a.channel])?;
    record.outputs = RunRecord::digest(&[&a.out])?;
    Ok(record)
}

fn encode(a: &EncodeArgs, dir: &Path) -> Result<RunRecord> {
    let (config, config_path, config_arg) = resolved_config(&a.config, dir)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let encoder = PairEncoder::new(
        &vocab,
        config.model.max_seq_len,
        config.model.num_speaker_roles,
        config.encoder.mode(a.no_disentangle),
    );
    let pairs: Vec<(Vec<Utterance>, Utterance)> = match load_records(&a.data)? {
        Records::Examples(v) => v.into_iter().map(|e| (e.context, e.response)).collect(),
        Records::Pools(v) => v
            .into_iter()
            .flat_map(|p| {
                let context = p.context;
                p.candidates.into_iter().map(move |(c, _)| (context.clone(), c))
            })
            .collect(),
        Records::Channel(_) => return Err(Error::Input("encode needs examples or pools, not a channel".into())),
    };
    let limit = a.limit.unwrap_or(usize::MAX);
    let mut jsonl = String::new();
    for (i, (context, response)) in pairs.iter().take(limit).enumerate() {
        let input = encoder.encode(context, response)?;
        if a.inspect {
            println!("# input {i}");
            print!("{}", input.inspect(&vocab));
        }
        jsonl.push_str(&serde_json::to_string(&input).expect("input serializes"));
        jsonl.push('\n');
    }
    let mut args = a.clone();
    args.config = config_arg;
    let mut record = RunRecord::new(Command::Encode(args)).with_config(&config, config_path.clone());
    let mut inputs: Vec<&Path> = vec![&a.data, &a.vocab];
    inputs.extend(config_path.as_deref());
    record.inputs = RunRecord::digest(&inputs)?;
    if let Some(out) = &a.out {
        write(out, &jsonl)?;
        record.outputs = RunRecord::digest(&[out])?;
    }
    Ok(record)
}

fn train_command(a: &TrainArgs, no_adaptation: bool, dir: &Path, adapt: bool) -> Result<RunRecord> {
    let (mut config, config_path, config_arg) = resolved_config(&a.config, dir)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    if let Some(seed) = a.seed {
        config.model.seed = seed;
        config.adapt.seed = seed;
        config.finetune.seed = seed;
    }
    let train_config: &mut TrainConfig = if adapt { &mut config.adapt } else { &mut config.finetune };
    if a.max_steps.is_some() {
        train_config.max_steps = a.max_steps;
    }
    train_config.disable_speaker_embeddings |= a.no_speaker_embeddings;
    let train_config = train_config.clone();
    train_config.validate()?;
    if a.no_disentangle {
        config.encoder.context = super::config::ContextKind::Alternation;
    }

    let start = match (&a.checkpoint_in, no_adaptation) {
        (Some(path), false) => {
            let model = Model::load(path)?;
            check_vocab(&model, &vocab)?;
            info!("starting from {}", path.display());
            model
        }
        (Some(path), true) => {
            warn!("--no-adaptation: ignoring {}", path.display());
            Model::new(config.model.with_vocab(vocab.len()))?
        }
        (None, _) => Model::new(config.model.with_vocab(vocab.len()))?,
    };
    let encoder = PairEncoder::new(
        &vocab,
        start.config.max_seq_len,
        start.config.num_speaker_roles,
        config.encoder.mode(false),
    );

    let outcome: TrainOutcome = if adapt {
        let dialogues = adaptation_dialogues(&a.data)?;
        let validation = match &a.valid {
            Some(path) => Some(Validation::Adaptation(adaptation_validation_set(
                &adaptation_dialogues(path)?,
                &encoder,
                train_config.mask_fraction,
                train_config.seed,
            )?)),
            None => None,
        };
        train(
            TrainData::Adapt {
                dialogues: &dialogues,
                encoder: encoder.clone(),
            },
            start,
            &train_config,
            validation.as_ref(),
        )?
    } else {
        let examples = encode_examples(&encoder, &labelled_examples(&a.data)?)?;
        let validation = match &a.valid {
            Some(path) => Some(Validation::Pools(encode_pools(&encoder, &pools_of(path)?)?)),
            None => None,
        };
        train(TrainData::Finetune(&examples), start, &train_config, validation.as_ref())?
    };

    let loss_log = a.loss_log.clone().unwrap_or_else(|| {
        let mut name = a.checkpoint_out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".loss.csv");
        a.checkpoint_out.with_file_name(name)
    });
    outcome.model.save(&a.checkpoint_out)?;
    write(&loss_log, &loss_log_csv(&outcome.log))?;
    let last = outcome.log.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "{}: {} steps, final loss {last:.6}, checkpoint {}",
        if adapt { "adapt" } else { "finetune" },
        outcome.steps,
        a.checkpoint_out.display()
    );
    if let Some(epoch) = outcome.best_epoch {
        println!("kept epoch {epoch} (validation {:?})", outcome.validation);
    }

    let mut args = a.clone();
    args.config = config_arg;
    args.loss_log = Some(loss_log.clone());
    let invocation = if adapt {
        Command::Adapt(AdaptArgs { train: args })
    } else {
        Command::Finetune(FinetuneArgs { train: args, no_adaptation })
    };
    let mut record = RunRecord::new(invocation).with_config(&config, config_path.clone());
    record.seed = Some(train_config.seed);
    let mut inputs: Vec<&Path> = vec![&a.data, &a.vocab];
    inputs.extend(a.checkpoint_in.as_deref().filter(|_| !no_adaptation));
    inputs.extend(a.valid.as_deref());
    inputs.extend(config_path.as_deref());
    record.inputs = RunRecord::digest(&inputs)?;
    record.outputs = RunRecord::digest(&[&a.checkpoint_out, &loss_log])?;
    Ok(record)
}

#[derive(Serialize)]
struct PoolScores<'a> {
    scores: &'a [f64],
    labels: &'a [u8],
}

fn evaluate_command(a: &EvaluateArgs, dir: &Path) -> Result<RunRecord> {
    let (mut config, config_path, config_arg) = resolved_config(&a.config, dir)?;
    if a.no_disentangle {
        config.encoder.context = super::config::ContextKind::Alternation;
    }
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = Model::load(&a.checkpoint)?;
    check_vocab(&model, &vocab)?;
    let encoder = PairEncoder::new(
        &vocab,
        model.config.max_seq_len,
        model.config.num_speaker_roles,
        config.encoder.mode(false),
    );
    let score = |path: &Path| -> Result<Vec<RankedPool>> { rank_encoded_pools(&model, &encode_pools(&encoder, &pools_of(path)?)?) };
    let ranked = score(&a.pools)?;

    let smallest = ranked.iter().map(RankedPool::len).min().unwrap_or(0);
    let cutoffs = match &a.cutoffs {
        Some(text) => parse_cutoffs(text)?,
        None => {
            let all: Vec<(usize, usize)> = config.eval.cutoffs.iter().map(|&[n, k]| (n, k)).collect();
            let (fit, skipped): (Vec<_>, Vec<_>) = all.into_iter().partition(|&(n, _)| n <= smallest);
            if !skipped.is_empty() {
                warn!("pools hold {smallest} candidates; skipping cutoffs {skipped:?}");
            }
            fit
        }
    };
    let mode = if a.strict { EvalMode::Strict } else { config.eval.mode };
    let mut report = evaluate(&ranked, &cutoffs, mode)?;

    if a.threshold_sweep {
        let grid = match &a.threshold_grid {
            Some(text) => parse_grid(text)?,
            None => config.eval.threshold_grid.clone(),
        };
        let tuning = match &a.valid {
            Some(path) => score(path)?,
            None => ranked.clone(),
        };
        for (tau, value) in threshold_sweep(&tuning, &grid)? {
            println!("sweep tau={tau:.2} R@1={value:.6}");
        }
        let tau = select_threshold(&tuning, &grid)?;
        report.threshold_used = Some(tau);
        report.no_answer_r_at_1 = Some(no_answer_recall_at_1(&ranked, tau)?);
    }

    print!("{report}");
    print!("{}", report.to_key_values());

    let mut args = a.clone();
    args.config = config_arg;
    let mut record = RunRecord::new(Command::Evaluate(args)).with_config(&config, config_path.clone());
    let mut inputs: Vec<&Path> = vec![&a.pools, &a.vocab, &a.checkpoint];
    inputs.extend(a.valid.as_deref());
    inputs.extend(config_path.as_deref());
    record.inputs = RunRecord::digest(&inputs)?;
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(out) = &a.out {
        write(out, &report.to_key_values())?;
        outputs.push(out);
    }
    if let Some(path) = &a.scores_out {
        let mut text = String::new();
        for p in &ranked {
            let line = PoolScores {
                scores: &p.scores,
                labels: &p.labels,
            };
            text.push_str(&serde_json::to_string(&line).expect("scores serialize"));
            text.push('\n');
        }
        write(path, &text)?;
        outputs.push(path);
    }
    record.outputs = RunRecord::digest(&outputs)?;
    Ok(record)
}

fn replay(a: &ReplayArgs, dir: &Path) -> Result<RunRecord> {
    let recorded = RunManifest::load(&a.from)?;
    if matches!(recorded.invocation, Command::Replay(_)) {
        return Err(Error::Input("a replay manifest cannot itself be replayed".into()));
    }
    for input in &recorded.inputs {
        let now = FileDigest::of(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(Error::Input(format!("input {} changed since the recorded run", input.path.display())));
        }
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut command = recorded.invocation.clone();
    for path in command.outputs_mut() {
        let name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        *path = a.out_dir.join(name);
    }
    let rerun = execute(&command, dir)?;
    if rerun.outputs.len() != recorded.outputs.len() {
        return Err(Error::Replay(format!(
            "{} outputs recorded, {} produced",
            recorded.outputs.len(),
            rerun.outputs.len()
        )));
    }
    let mut mismatched = Vec::new();
    for (old, new) in recorded.outputs.iter().zip(&rerun.outputs) {
        let same = old.sha256 == new.sha256;
        println!("{} {}", if same { "identical" } else { "differs  " }, new.path.display());
        if !same {
            mismatched.push(new.path.display().to_string());
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::Replay(format!("outputs differ: {}", mismatched.join(", "))));
    }
    let mut record = RunRecord::new(Command::Replay(a.clone()));
    record.seed = recorded.seed;
    record.inputs = RunRecord::digest(&[&a.from])?;
    record.inputs.extend(rerun.inputs);
    record.outputs = rerun.outputs;
    Ok(record)
}
