use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::data::FeatureScaler;
use crate::layers::NamedTensor;

pub const CHECKPOINT_FORMAT: &str = "mgt-checkpoint/1";

/// Self-describing JSON container for a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub scaler: FeatureScaler,
    /// Seed of the training run that produced the parameters.
    pub seed: u64,
    pub params: Vec<NamedTensor>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint format {0:?} is not {CHECKPOINT_FORMAT}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl Checkpoint {
    pub fn new(model: &Model, scaler: &FeatureScaler, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            config: model.config.clone(),
            scaler: scaler.clone(),
            seed,
            params: model.store.to_named(),
        }
    }

    /// Rebuilds the model; the structure comes from the stored configuration.
    pub fn model(&self) -> Result<Model, CheckpointError> {
        let mut model = Model::new(self.config.clone(), &mut crate::seeded_rng(0))?;
        model
            .store
            .load_named(&self.params)
            .map_err(|e| CheckpointError::Model(e.into()))?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
