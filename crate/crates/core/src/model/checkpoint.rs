use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

const FORMAT: &str = "turnrank-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

impl Model {
    /// JSON checkpoint: config plus every tensor under its canonical name.
    /// Floats are written in shortest round-trip form, so reloading is exact.
    pub fn to_checkpoint_string(&self) -> String {
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect();
        let file = CheckpointFile {
            format: FORMAT.to_string(),
            version: VERSION,
            config: self.config.clone(),
            tensors,
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Model> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        file.config.validate()?;
        let mut params = super::ModelParams::init(&file.config)?;
        let slots = params.tensors_mut();
        if slots.len() != file.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                file.tensors.len()
            )));
        }
        for ((name, slot), record) in slots.into_iter().zip(file.tensors) {
            if name != record.name {
                return Err(Error::Checkpoint(format!("expected tensor {name}, found {}", record.name)));
            }
            let shape = (record.shape[0], record.shape[1]);
            if shape != slot.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, config requires {:?}",
                    slot.dim()
                )));
            }
            *slot = Array2::from_shape_vec(shape, record.data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        }
        Model::from_parts(file.config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}
