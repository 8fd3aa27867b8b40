use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{ParamStore, Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;

/// One parameter tensor; `data` is base64 of its little-endian element
/// bytes in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: String,
}

/// Self-describing JSON checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Element width in bits, 32 or 64.
    pub precision: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Hash of the vocabulary the word ids refer to.
    pub vocab_sha256: String,
    pub tag_table: Vec<u32>,
    pub epoch: usize,
    pub val_loss: f64,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &Model<T>,
        train: &TrainConfig,
        vocab_sha256: &str,
        epoch: usize,
        val_loss: f64,
    ) -> Self {
        let params = model
            .params
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                trainable: p.trainable,
                data: STANDARD.encode(T::to_le_bytes_vec(p.tensor.data())),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            precision: T::BITS,
            model: model.config.clone(),
            train: train.clone(),
            vocab_sha256: vocab_sha256.to_string(),
            tag_table: model.tag_table.clone(),
            epoch,
            val_loss,
            params,
        }
    }

    /// Rebuilds the model. The checkpoint precision must match `T`.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.precision != T::BITS {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {}-bit values, {}-bit requested",
                self.precision,
                T::BITS
            )));
        }
        let mut store = ParamStore::new();
        for r in &self.params {
            let bytes = STANDARD
                .decode(&r.data)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", r.name)))?;
            let values = T::from_le_bytes_vec(&bytes)
                .ok_or_else(|| Error::Checkpoint(format!("parameter `{}`: truncated data", r.name)))?;
            let tensor = Tensor::new(r.shape.clone(), values)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", r.name)))?;
            store.add(r.name.clone(), tensor, r.trainable)?;
        }
        Model::from_params(self.model.clone(), store, self.tag_table.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
