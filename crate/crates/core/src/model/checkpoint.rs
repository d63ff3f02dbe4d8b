use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, TrainedModel};
use crate::data::{Codebook, Encoder};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned model file: spec, 64-bit parameters, the fitted encoder and the
/// hash of the codebook it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub codebook_hash: String,
    pub encoder: Encoder,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(codebook: &Codebook, encoder: Encoder, model: TrainedModel) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            codebook_hash: codebook.fingerprint(),
            encoder,
            model,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| ModelError::Checkpoint {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Loads a checkpoint and refuses it unless it was trained against
    /// `codebook`.
    pub fn load(path: impl AsRef<Path>, codebook: &Codebook) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let fail = |reason: String| ModelError::Checkpoint {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        ckpt.verify(codebook)?;
        Ok(ckpt)
    }

    pub fn verify(&self, codebook: &Codebook) -> Result<(), ModelError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::CheckpointVersion(self.format_version));
        }
        let expected = codebook.fingerprint();
        if self.codebook_hash != expected || self.encoder.codebook_hash != expected {
            return Err(ModelError::CodebookMismatch {
                expected,
                found: self.codebook_hash.clone(),
            });
        }
        Ok(())
    }
}
