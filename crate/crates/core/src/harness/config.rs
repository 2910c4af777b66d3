//! Experiment configuration (TOML) with environment overrides for paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{LabelMapping, ScoringConfig};
use crate::model::ModelConfig;
use crate::simulator::PlanOptions;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[default]
    Pretrain,
    Adapt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup length in steps.
    pub warmup_steps: usize,
    /// Cosine decay after warmup reaches `min_lr_ratio * learning_rate` at `max_steps`.
    pub min_lr_ratio: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            warmup_steps: 100,
            min_lr_ratio: 0.05,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_steps: usize,
    /// Budget per batch in featurizer frames (before pooling).
    pub max_frames_per_batch: usize,
    /// Training utterances longer than this are randomly cropped (seconds).
    pub max_duration: f64,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Train from random initialization even in the adapt stage.
    pub from_scratch: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            max_frames_per_batch: 20_000,
            max_duration: 30.0,
            checkpoint_every: 500,
            seed: 0,
            from_scratch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Long-form decoding window and hop, seconds.
    pub window: f64,
    pub hop: f64,
    /// Minimum hypothesis segment written to RTTM, seconds.
    pub min_segment: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window: 30.0,
            hop: 5.0,
            min_segment: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub stage: Stage,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub metrics: ScoringConfig,
    pub simulator: PlanOptions,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Pretrain,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            metrics: ScoringConfig {
                label_mapping: LabelMapping::Optimal,
                ..ScoringConfig::default()
            },
            simulator: PlanOptions::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Environment variables that override `[paths]` entries.
pub const ENV_TRAIN_MANIFEST: &str = "LANGDIAR_TRAIN_MANIFEST";
pub const ENV_EVAL_MANIFEST: &str = "LANGDIAR_EVAL_MANIFEST";
pub const ENV_OUTPUT_DIR: &str = "LANGDIAR_OUTPUT_DIR";
pub const ENV_INIT_CHECKPOINT: &str = "LANGDIAR_INIT_CHECKPOINT";

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply `LANGDIAR_*` path overrides from the process environment.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var_os(k));
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<std::ffi::OsString>) {
        let slots: [(&str, &mut Option<PathBuf>); 4] = [
            (ENV_TRAIN_MANIFEST, &mut self.paths.train_manifest),
            (ENV_EVAL_MANIFEST, &mut self.paths.eval_manifest),
            (ENV_OUTPUT_DIR, &mut self.paths.output_dir),
            (ENV_INIT_CHECKPOINT, &mut self.paths.init_checkpoint),
        ];
        for (key, slot) in slots {
            if let Some(v) = get(key) {
                *slot = Some(PathBuf::from(v));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.metrics.validate()?;
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("optimizer needs learning_rate > 0 and betas in [0, 1)".into()));
        }
        if o.clip_norm < 0.0 || o.weight_decay < 0.0 || !(0.0..=1.0).contains(&o.min_lr_ratio) {
            return Err(Error::Config("clip_norm and weight_decay must be >= 0, min_lr_ratio in [0, 1]".into()));
        }
        let t = &self.training;
        if t.max_frames_per_batch == 0 || !(t.max_duration > 0.0) {
            return Err(Error::Config("batch frame budget and max duration must be positive".into()));
        }
        if !(self.eval.window > 0.0 && self.eval.hop > 0.0 && self.eval.hop <= self.eval.window) {
            return Err(Error::Config("eval window and hop must satisfy 0 < hop <= window".into()));
        }
        Ok(())
    }

    /// Adapt-stage runs need an initial checkpoint unless training from scratch.
    pub fn check_init(&self, init: Option<&Path>) -> Result<()> {
        if self.stage == Stage::Adapt && init.is_none() && !self.training.from_scratch {
            return Err(Error::Config(
                "adapt stage needs an initial checkpoint (or training.from_scratch = true)".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml_str("stage = \"adapt\"\n[training]\nmax_steps = 7\n").unwrap();
        assert_eq!(partial.stage, Stage::Adapt);
        assert_eq!(partial.training.max_steps, 7);
        assert_eq!(partial.training.max_frames_per_batch, 20_000);
        assert!(ExperimentConfig::from_toml_str("[training]\nmax_steps = \"x\"").is_err());
    }

    #[test]
    fn env_overrides_paths() {
        let mut cfg = ExperimentConfig::default();
        cfg.paths.output_dir = Some("from-file".into());
        cfg.apply_env_from(|k| (k == ENV_OUTPUT_DIR).then(|| "from-env".into()));
        assert_eq!(cfg.paths.output_dir, Some(PathBuf::from("from-env")));
        assert_eq!(cfg.paths.train_manifest, None);
    }

    #[test]
    fn adapt_requires_init() {
        let mut cfg = ExperimentConfig {
            stage: Stage::Adapt,
            ..Default::default()
        };
        assert!(cfg.check_init(None).is_err());
        assert!(cfg.check_init(Some(Path::new("ckpt"))).is_ok());
        cfg.training.from_scratch = true;
        assert!(cfg.check_init(None).is_ok());
    }
}
