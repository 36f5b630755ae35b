//! A small transformer encoder scorer with exact analytic gradients.
//!
//! Input embeddings are the sum of token, segment, position and speaker-role
//! embeddings. The encoder uses post-layernorm sublayers with GELU feed-forward
//! blocks. Three heads read the final hidden states: a masked-token classifier
//! at every position, and a two-way next-response classifier plus the scalar
//! matching logit at the `[CLS]` position.

mod checkpoint;
mod forward;
pub(crate) mod ops;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forward::{ForwardOptions, ForwardOutput, ForwardTrace, HeadGradients, LayerTrace, MlmHead};
pub use ops::sigmoid;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub num_speaker_roles: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults for the bundled toy corpus.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_seq_len: 128,
            num_speaker_roles: 3,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 || self.num_heads == 0 {
            return fail("model dimensions must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_speaker_roles < 3 {
            return fail(format!("num_speaker_roles must be at least 3, got {}", self.num_speaker_roles));
        }
        if self.max_seq_len < 8 {
            return fail(format!("max_seq_len must be at least 8, got {}", self.max_seq_len));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }
}

/// Weights of one encoder layer. Biases and layernorm vectors are `1 x n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query: Array2<f64>,
    pub query_bias: Array2<f64>,
    pub key: Array2<f64>,
    pub key_bias: Array2<f64>,
    pub value: Array2<f64>,
    pub value_bias: Array2<f64>,
    pub output: Array2<f64>,
    pub output_bias: Array2<f64>,
    pub attn_norm_gain: Array2<f64>,
    pub attn_norm_bias: Array2<f64>,
    pub ffn_in: Array2<f64>,
    pub ffn_in_bias: Array2<f64>,
    pub ffn_out: Array2<f64>,
    pub ffn_out_bias: Array2<f64>,
    pub ffn_norm_gain: Array2<f64>,
    pub ffn_norm_bias: Array2<f64>,
}

/// All learnable tensors. The same layout doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub token_table: Array2<f64>,
    pub segment_table: Array2<f64>,
    pub position_table: Array2<f64>,
    pub speaker_table: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub mlm_weight: Array2<f64>,
    pub mlm_bias: Array2<f64>,
    pub nsp_weight: Array2<f64>,
    pub nsp_bias: Array2<f64>,
    pub match_weight: Array2<f64>,
    pub match_bias: Array2<f64>,
}

pub type ParamGradients = ModelParams;

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(query, query_bias, key, key_bias, value, value_bias, output, output_bias, attn_norm_gain, attn_norm_bias,
            ffn_in, ffn_in_bias, ffn_out, ffn_out_bias, ffn_norm_gain, ffn_norm_bias)
    };
}

macro_rules! top_fields {
    ($m:ident) => {
        $m!(token_table, segment_table, position_table, speaker_table)
    };
}

macro_rules! head_fields {
    ($m:ident) => {
        $m!(mlm_weight, mlm_bias, nsp_weight, nsp_bias, match_weight, match_bias)
    };
}

impl LayerParams {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        macro_rules! list { ($($f:ident),*) => { vec![$((stringify!($f), &self.$f)),*] }; }
        layer_fields!(list)
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        macro_rules! list { ($($f:ident),*) => { vec![$((stringify!($f), &mut self.$f)),*] }; }
        layer_fields!(list)
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl ModelParams {
    /// Normal(0, 0.02) tables and projections, unit layernorm gains, zero biases,
    /// and a zero speaker row 0.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden_dim;
        let f = config.ffn_dim;
        let zeros = |n: usize| Array2::zeros((1, n));
        let ones = |n: usize| Array2::ones((1, n));
        let token_table = normal(&mut rng, config.vocab_size, h);
        let segment_table = normal(&mut rng, 2, h);
        let position_table = normal(&mut rng, config.max_seq_len, h);
        let mut speaker_table = normal(&mut rng, config.num_speaker_roles, h);
        speaker_table.row_mut(0).fill(0.0);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                query: normal(&mut rng, h, h),
                query_bias: zeros(h),
                key: normal(&mut rng, h, h),
                key_bias: zeros(h),
                value: normal(&mut rng, h, h),
                value_bias: zeros(h),
                output: normal(&mut rng, h, h),
                output_bias: zeros(h),
                attn_norm_gain: ones(h),
                attn_norm_bias: zeros(h),
                ffn_in: normal(&mut rng, h, f),
                ffn_in_bias: zeros(f),
                ffn_out: normal(&mut rng, f, h),
                ffn_out_bias: zeros(h),
                ffn_norm_gain: ones(h),
                ffn_norm_bias: zeros(h),
            })
            .collect();
        Ok(ModelParams {
            token_table,
            segment_table,
            position_table,
            speaker_table,
            layers,
            mlm_weight: normal(&mut rng, h, config.vocab_size),
            mlm_bias: zeros(config.vocab_size),
            nsp_weight: normal(&mut rng, h, 2),
            nsp_bias: zeros(2),
            match_weight: normal(&mut rng, h, 1),
            match_bias: zeros(1),
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named tensors in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        macro_rules! push { ($($f:ident),*) => { $(out.push((stringify!($f).to_string(), &self.$f));)* }; }
        top_fields!(push);
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.tensors().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        head_fields!(push);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        macro_rules! push { ($($f:ident),*) => { $(out.push((stringify!($f).to_string(), &mut self.$f));)* }; }
        top_fields!(push);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.tensors_mut().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        head_fields!(push);
        out
    }

    /// Expected `(rows, cols)` for every named tensor under `config`.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let (h, f, v) = (config.hidden_dim, config.ffn_dim, config.vocab_size);
        let mut out = vec![
            ("token_table".to_string(), (v, h)),
            ("segment_table".to_string(), (2, h)),
            ("position_table".to_string(), (config.max_seq_len, h)),
            ("speaker_table".to_string(), (config.num_speaker_roles, h)),
        ];
        let layer_shapes = [
            ("query", (h, h)),
            ("query_bias", (1, h)),
            ("key", (h, h)),
            ("key_bias", (1, h)),
            ("value", (h, h)),
            ("value_bias", (1, h)),
            ("output", (h, h)),
            ("output_bias", (1, h)),
            ("attn_norm_gain", (1, h)),
            ("attn_norm_bias", (1, h)),
            ("ffn_in", (h, f)),
            ("ffn_in_bias", (1, f)),
            ("ffn_out", (f, h)),
            ("ffn_out_bias", (1, h)),
            ("ffn_norm_gain", (1, h)),
            ("ffn_norm_bias", (1, h)),
        ];
        for i in 0..config.num_layers {
            out.extend(layer_shapes.iter().map(|(n, s)| (format!("layers.{i}.{n}"), *s)));
        }
        out.extend([
            ("mlm_weight".to_string(), (h, v)),
            ("mlm_bias".to_string(), (1, v)),
            ("nsp_weight".to_string(), (h, 2)),
            ("nsp_bias".to_string(), (1, 2)),
            ("match_weight".to_string(), (h, 1)),
            ("match_bias".to_string(), (1, 1)),
        ]);
        out
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Self::expected_shapes(config);
        let actual = self.tensors();
        if expected.len() != actual.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((en, es), (an, t)) in expected.iter().zip(&actual) {
            if en != an || t.dim() != *es {
                return Err(Error::Checkpoint(format!("tensor {an} has shape {:?}, expected {en} {:?}", t.dim(), es)));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor {an} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Zeroes the speaker-role table, removing speaker information from the input.
    pub fn zero_speaker_table(&mut self) {
        self.speaker_table.fill(0.0);
    }
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Model { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 10,
            num_speaker_roles: 3,
            dropout_rate: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(ModelConfig { num_heads: 3, ..tiny() }.validate().is_err());
        assert!(ModelConfig { num_speaker_roles: 2, ..tiny() }.validate().is_err());
        assert!(ModelConfig { max_seq_len: 7, ..tiny() }.validate().is_err());
    }

    #[test]
    fn init_shapes_and_conventions() {
        let p = ModelParams::init(&tiny()).unwrap();
        p.check_shapes(&tiny()).unwrap();
        assert!(p.speaker_table.row(0).iter().all(|&v| v == 0.0));
        assert!(p.speaker_table.row(1).iter().any(|&v| v != 0.0));
        assert!(p.layers[0].attn_norm_gain.iter().all(|&v| v == 1.0));
        assert_eq!(p, ModelParams::init(&tiny()).unwrap());
        assert_ne!(p, ModelParams::init(&ModelConfig { seed: 4, ..tiny() }).unwrap());
    }

    #[test]
    fn tensor_names_are_unique() {
        let p = ModelParams::init(&tiny()).unwrap();
        let mut names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
        assert_eq!(total, 4 + 16 * 2 + 6);
    }
}
