//! Pipeline configuration files (TOML).

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disentangle::DEFAULT_MAX_UTTERANCES;
use crate::encoder_input::ContextMode;
use crate::error::{Error, Result};
use crate::eval::{default_threshold_grid, EvalMode};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Environment variable naming the directory searched for named configs.
pub const CONFIG_DIR_ENV: &str = "TURNRANK_CONFIG_DIR";
pub const DEFAULT_CONFIG_DIR: &str = "configs";
pub const DEFAULT_CONFIG_NAME: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub num_speaker_roles: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_dim: 3072,
            max_seq_len: 512,
            num_speaker_roles: 3,
            dropout_rate: 0.0,
            seed: 0,
        }
    }
}

impl ModelSection {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            num_speaker_roles: self.num_speaker_roles,
            dropout_rate: self.dropout_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Disentangle,
    Alternation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub context: ContextKind,
    pub max_utterances: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            context: ContextKind::Disentangle,
            max_utterances: DEFAULT_MAX_UTTERANCES,
        }
    }
}

impl EncoderSection {
    pub fn mode(&self, no_disentangle: bool) -> ContextMode {
        match (self.context, no_disentangle) {
            (ContextKind::Disentangle, false) => ContextMode::Disentangle {
                max_utterances: self.max_utterances,
            },
            _ => ContextMode::Alternation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `[n, k]` pairs for R_n@k.
    pub cutoffs: Vec<[usize; 2]>,
    pub mode: EvalMode,
    pub threshold_grid: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: vec![[10, 1], [10, 2], [10, 5], [2, 1]],
            mode: EvalMode::Lenient,
            threshold_grid: default_threshold_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSection,
    pub encoder: EncoderSection,
    pub adapt: TrainConfig,
    pub finetune: TrainConfig,
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.adapt.validate()?;
        config.finetune.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `explicit`, then the environment variable, then `configs`.
pub fn config_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| env::var_os(CONFIG_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG_DIR))
}

/// Resolves `--config`: an existing file path, or a name looked up as
/// `<dir>/<name>.toml`. Without a request, `<dir>/default.toml` is used when it
/// exists and built-in defaults otherwise (returned path `None`).
pub fn resolve(requested: Option<&str>, dir: &Path) -> Result<(PipelineConfig, Option<PathBuf>)> {
    match requested {
        Some(req) => {
            let direct = PathBuf::from(req);
            let path = if direct.is_file() {
                direct
            } else {
                let named = dir.join(format!("{req}.toml"));
                if !named.is_file() {
                    return Err(Error::Config(format!(
                        "config {req:?} is neither a file nor present as {}",
                        named.display()
                    )));
                }
                named
            };
            Ok((PipelineConfig::load(&path)?, Some(path)))
        }
        None => {
            let path = dir.join(format!("{DEFAULT_CONFIG_NAME}.toml"));
            if path.is_file() {
                Ok((PipelineConfig::load(&path)?, Some(path)))
            } else {
                Ok((PipelineConfig::default(), None))
            }
        }
    }
}
