use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor2;
use crate::patch::block::{InitStrategy, VirtualTokenBlock};
use crate::patch::train::TrainConfig;
use crate::toyvlm::model::Model;

const FORMAT: &str = "patchlab.checkpoint";
const VERSION: u32 = 1;

/// Serialized block state. Loading validates the vocabulary and parameter
/// hashes, so a checkpoint only opens against the backbone it was tuned for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchCheckpoint {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub dim: usize,
    pub vocab_hash: String,
    pub params_hash: String,
    pub config: TrainConfig,
    pub init: InitStrategy,
    pub epochs_done: usize,
    pub epoch_losses: Vec<f64>,
    /// Row-major block values, n rows by dim columns.
    pub delta: Vec<f64>,
}

impl PatchCheckpoint {
    pub fn new(
        block: &VirtualTokenBlock,
        model: &Model,
        config: &TrainConfig,
        epoch_losses: &[f64],
    ) -> PatchCheckpoint {
        PatchCheckpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            n: block.n(),
            dim: block.dim(),
            vocab_hash: model.vocab().hash(),
            params_hash: model.params_hash(),
            config: config.clone(),
            init: block.init().clone(),
            epochs_done: block.trained_epochs(),
            epoch_losses: epoch_losses.to_vec(),
            delta: block.matrix().data().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path, model: &Model) -> Result<(VirtualTokenBlock, PatchCheckpoint)> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: PatchCheckpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: format {:?} is not a block checkpoint",
                path.display(),
                ckpt.format
            )));
        }
        if ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: version {} unsupported",
                path.display(),
                ckpt.version
            )));
        }
        if ckpt.vocab_hash != model.vocab().hash() {
            return Err(Error::Checkpoint(
                "vocabulary hash mismatch: checkpoint belongs to a different vocabulary".into(),
            ));
        }
        if ckpt.params_hash != model.params_hash() {
            return Err(Error::Checkpoint(
                "parameter hash mismatch: checkpoint belongs to a different backbone".into(),
            ));
        }
        if ckpt.delta.len() != ckpt.n * ckpt.dim {
            return Err(Error::Checkpoint(format!(
                "delta holds {} values, header says {}x{}",
                ckpt.delta.len(),
                ckpt.n,
                ckpt.dim
            )));
        }
        if ckpt.dim != model.cfg().dim {
            return Err(Error::Checkpoint(format!(
                "block dim {} does not match model dim {}",
                ckpt.dim,
                model.cfg().dim
            )));
        }
        let matrix = Tensor2::from_vec(ckpt.n, ckpt.dim, ckpt.delta.clone())?;
        let block = VirtualTokenBlock::restore(
            ckpt.n,
            ckpt.dim,
            matrix,
            ckpt.init.clone(),
            ckpt.epochs_done,
        );
        Ok((block, ckpt))
    }
}
