use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::SequenceModel;
use super::train::{TrainConfig, TrainingLog};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "expressway-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON document holding a trained model, its training
/// configuration and log, and the path of the normalizer it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: SequenceModel,
    pub train_config: Option<TrainConfig>,
    pub normalizer: Option<String>,
    pub log: Option<TrainingLog>,
}

impl Checkpoint {
    pub fn new(model: SequenceModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            train_config: None,
            normalizer: None,
            log: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a model checkpoint (format `{}`)", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        c.model.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
