//! Frame-rate and loss-design ablations over a shared data order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::format_row;
use crate::types::DerBreakdown;

use super::checkpoint::load_model;
use super::config::ExperimentConfig;
use super::data::Dataset;
use super::evaluate::evaluate;
use super::train::{train, TrainOptions};

pub const POOLING_WINDOWS: [usize; 3] = [1, 4, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAxes {
    /// Subset of [`POOLING_WINDOWS`]; empty skips the frame-rate axis.
    pub pooling: Vec<usize>,
    /// Run the 2x2 grid of focal / focal Tversky switches.
    pub loss_flags: bool,
}

impl Default for AblationAxes {
    fn default() -> Self {
        Self {
            pooling: POOLING_WINDOWS.to_vec(),
            loss_flags: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Pooling,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub axis: AblationAxis,
    pub pooling_window: usize,
    pub frame_period_ms: f64,
    pub use_focal: bool,
    pub use_focal_tversky: bool,
    /// Output frames for the first evaluation utterance.
    pub output_frames: usize,
    /// Featurizer frames for the same utterance.
    pub featurizer_frames: usize,
    pub ideal: DerBreakdown,
    pub practical: DerBreakdown,
    pub batch_order_hash: u64,
    pub final_loss: Option<f64>,
}

fn variants(base: &ExperimentConfig, axes: &AblationAxes) -> Result<Vec<(String, AblationAxis, ExperimentConfig)>> {
    let mut out = Vec::new();
    for &w in &axes.pooling {
        if !POOLING_WINDOWS.contains(&w) {
            return Err(Error::invalid(format!("pooling window {w} is not one of {POOLING_WINDOWS:?}")));
        }
        let mut cfg = base.clone();
        cfg.model.encoder.pooling_window = w;
        out.push((format!("pool-{w}"), AblationAxis::Pooling, cfg));
    }
    if axes.loss_flags {
        for (focal, tversky) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut cfg = base.clone();
            cfg.loss.use_focal = focal;
            cfg.loss.use_focal_tversky = tversky;
            out.push((
                format!("focal-{}-tversky-{}", u8::from(focal), u8::from(tversky)),
                AblationAxis::Loss,
                cfg,
            ));
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("ablation has no runs"));
    }
    Ok(out)
}

/// Train and evaluate every variant from scratch with the base seed, so all runs see the
/// same batch sequence.
pub fn ablation_matrix(
    base: &ExperimentConfig,
    axes: &AblationAxes,
    train_set: &Dataset,
    eval_set: &Dataset,
    out_dir: &Path,
) -> Result<Vec<AblationRun>> {
    let mut runs = Vec::new();
    for (name, axis, mut cfg) in variants(base, axes)? {
        cfg.training.from_scratch = true;
        let dir = out_dir.join(&name);
        let outcome = train(&cfg, train_set, &dir, &TrainOptions::default())?;
        let (model, _) = load_model(&outcome.final_checkpoint)?;
        let report = evaluate(&model, eval_set, &cfg, Some(&dir.join("eval")))?;
        let first = eval_set.utterances.first().map_or(0, |u| u.audio.len());
        let run = AblationRun {
            name,
            axis,
            pooling_window: cfg.model.encoder.pooling_window,
            frame_period_ms: 1000.0 * cfg.model.frame_period()?,
            use_focal: cfg.loss.use_focal,
            use_focal_tversky: cfg.loss.use_focal_tversky,
            output_frames: cfg.model.frames_for(first)?,
            featurizer_frames: cfg.model.featurizer.frames_for(first)?,
            ideal: report.ideal,
            practical: report.practical,
            batch_order_hash: outcome.batch_order_hash,
            final_loss: outcome.log.last().map(|l| l.loss),
        };
        log::info!("{}", format_row(&run.name, Some(&run.ideal), &run.practical));
        runs.push(run);
    }
    let path = out_dir.join("ablation.json");
    std::fs::write(&path, serde_json::to_string_pretty(&runs)?).map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join("ablation.txt");
    std::fs::write(&path, format!("{}\n{}", pooling_table(&runs), loss_table(&runs))).map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}

fn mark(b: bool) -> &'static str {
    if b {
        "✓"
    } else {
        "✗"
    }
}

/// Frame-rate table: one row per pooling window.
pub fn pooling_table(runs: &[AblationRun]) -> String {
    let mut s = format!("{:<12} {:>8} {:>8}  {}\n", "frame rate", "T'/T", "Ideal", "Practical DER (FA/Miss/Conf)");
    for r in runs.iter().filter(|r| r.axis == AblationAxis::Pooling) {
        let label = format!("{:.0} ms", r.frame_period_ms);
        let ratio = format!("{}/{}", r.output_frames, r.featurizer_frames);
        let row = format_row("", Some(&r.ideal), &r.practical);
        s.push_str(&format!("{label:<12} {ratio:>8} {}\n", row.trim_start()));
    }
    s
}

/// Loss-design table: the 2x2 grid of switches.
pub fn loss_table(runs: &[AblationRun]) -> String {
    let mut s = format!("{:<6} {:<8} {:>8}  {}\n", "focal", "tversky", "Ideal", "Practical DER (FA/Miss/Conf)");
    for r in runs.iter().filter(|r| r.axis == AblationAxis::Loss) {
        let row = format_row("", Some(&r.ideal), &r.practical);
        s.push_str(&format!(
            "{:<6} {:<8} {}\n",
            mark(r.use_focal),
            mark(r.use_focal_tversky),
            row.trim_start()
        ));
    }
    s
}
