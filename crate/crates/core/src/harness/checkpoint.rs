//! Checkpoint directory: `params.safetensors`, `optimizer.safetensors`, `state.json`.

use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LanguageDiarizer;

use super::config::{ExperimentConfig, Stage};
use super::optim::AdamW;

pub const PARAMS_FILE: &str = "params.safetensors";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitSource {
    Scratch,
    Pretrained { checkpoint: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub config: ExperimentConfig,
    pub stage: Stage,
    pub step: usize,
    pub init: InitSource,
    /// Hash of the batch sequence consumed so far.
    pub batch_order_hash: u64,
    pub last_loss: Option<f64>,
}

pub fn save_checkpoint(dir: &Path, model: &LanguageDiarizer, opt: &AdamW, state: &CheckpointState) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.store().save(dir.join(PARAMS_FILE))?;
    opt.save(dir.join(OPTIMIZER_FILE))?;
    let path = dir.join(STATE_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(state)?).map_err(|e| Error::io(&path, e))
}

pub fn read_state(dir: &Path) -> Result<CheckpointState> {
    let path = dir.join(STATE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Rebuild the model a checkpoint was saved from.
pub fn load_model(dir: &Path) -> Result<(LanguageDiarizer, CheckpointState)> {
    let state = read_state(dir)?;
    let mut model = LanguageDiarizer::new(&state.config.model, state.config.training.seed, DType::F32)?;
    model.store_mut().load(dir.join(PARAMS_FILE))?;
    Ok((model, state))
}

/// Overwrite `model` parameters from a checkpoint whose architecture matches.
pub fn load_params_into(model: &mut LanguageDiarizer, dir: &Path) -> Result<()> {
    model
        .store_mut()
        .load(dir.join(PARAMS_FILE))
        .map_err(|e| Error::Config(format!("checkpoint {} is incompatible: {e}", dir.display())))
}
