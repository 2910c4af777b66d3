//! Training loop with deep-supervised loss, clipping, JSON-lines logging and checkpoints.

use std::collections::hash_map::DefaultHasher;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::total_loss;
use crate::model::LanguageDiarizer;
use crate::nn::{scalar, Mode};

use super::checkpoint::{load_params_into, read_state, save_checkpoint, CheckpointState, InitSource, OPTIMIZER_FILE};
use super::config::ExperimentConfig;
use super::data::{crop_offset, epoch_order, make_batches, Dataset, Utterance};
use super::optim::AdamW;

pub const LOG_FILE: &str = "train.jsonl";
pub const FINAL_DIR: &str = "final";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Initialize parameters from this checkpoint (pretrained init).
    pub init: Option<PathBuf>,
    /// Continue an interrupted run from this checkpoint (parameters, optimizer, step).
    pub resume: Option<PathBuf>,
    /// Stop after this many total steps even if `max_steps` is larger.
    pub stop_after: Option<usize>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub dia: f64,
    pub ovr: f64,
    pub act: f64,
    pub grad_norm: f64,
    pub utterances: Vec<String>,
    /// Mean number of matched language queries at the final decoder step.
    pub matched: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub steps: usize,
    pub log: Vec<StepLog>,
    pub batch_order_hash: u64,
}

fn dropout_seed(seed: u64, step: usize, item: usize) -> u64 {
    let mut h = DefaultHasher::new();
    (seed, step, item, "dropout").hash(&mut h);
    h.finish()
}

/// Prepared (cropped) utterance for `epoch`.
fn training_view(u: &Utterance, index: usize, max_len: usize, seed: u64, epoch: usize) -> Result<Utterance> {
    if u.audio.len() <= max_len {
        return Ok(u.clone());
    }
    let off = crop_offset(u.audio.len(), max_len, seed, epoch, index);
    u.crop(off, off + max_len)
}

/// Loss of one batch (mean over utterances) and its log line fields.
pub fn batch_loss(
    model: &LanguageDiarizer,
    config: &ExperimentConfig,
    batch: &[&Utterance],
    mode_seed: impl Fn(usize) -> Option<u64>,
) -> Result<(Tensor, [f64; 4], f64)> {
    let mut sum: Option<Tensor> = None;
    let mut terms = [0.0; 4];
    let mut matched = 0.0;
    for (j, u) in batch.iter().enumerate() {
        let mode = match mode_seed(j) {
            Some(s) => Mode::train(config.model.encoder.dropout, s),
            None => Mode::Eval,
        };
        let r: Result<(Tensor, crate::losses::LossDiagnostics)> = (|| {
            let inventory = u.inventory()?;
            let target = model.target_for(&u.labels, &inventory, u.audio.len())?;
            let pred = model.forward(&u.audio, &mode)?;
            total_loss(&pred, &target, &config.loss)
        })();
        let (loss, diag) = r.map_err(|e| Error::Utterance {
            id: u.id.clone(),
            source: Box::new(e),
        })?;
        terms[0] += diag.total;
        terms[1] += diag.mean_term(|s| s.dia);
        terms[2] += diag.mean_term(|s| s.ovr);
        terms[3] += diag.mean_term(|s| s.act);
        matched += diag.steps.last().map_or(0, |s| s.matched.len()) as f64;
        sum = Some(match sum {
            None => loss,
            Some(s) => (s + loss)?,
        });
    }
    let n = batch.len() as f64;
    let loss = (sum.ok_or_else(|| Error::invalid("empty batch"))? / n)?;
    Ok((loss, terms.map(|t| t / n), matched / n))
}

/// Train per `config` on `data`, writing the log and checkpoints under `out_dir`.
pub fn train(config: &ExperimentConfig, data: &Dataset, out_dir: &Path, options: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let tc = &config.training;
    let mut model = LanguageDiarizer::new(&config.model, tc.seed, DType::F32)?;
    let mut opt = AdamW::new(&config.optimizer);
    let mut start_step = 0;
    let mut init = InitSource::Scratch;
    if let Some(dir) = &options.resume {
        let state = read_state(dir)?;
        load_params_into(&mut model, dir)?;
        opt = AdamW::load(&config.optimizer, dir.join(OPTIMIZER_FILE), state.step)?;
        start_step = state.step;
        init = state.init;
    } else {
        let init_dir = options.init.clone().or_else(|| config.paths.init_checkpoint.clone());
        let init_dir = if tc.from_scratch { None } else { init_dir };
        config.check_init(init_dir.as_deref())?;
        if let Some(dir) = init_dir {
            load_params_into(&mut model, &dir)?;
            init = InitSource::Pretrained { checkpoint: dir };
        }
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let log_file = if start_step > 0 {
        std::fs::OpenOptions::new().append(true).create(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log_writer = BufWriter::new(log_file);

    let sr = data.utterances[0].audio.sample_rate() as f64;
    let max_len = (tc.max_duration * sr).round() as usize;
    let base_frames: Vec<usize> = data
        .utterances
        .iter()
        .map(|u| config.model.featurizer.frames_for(u.audio.len().min(max_len)))
        .collect::<Result<_>>()?;
    let stop = options.stop_after.unwrap_or(tc.max_steps).min(tc.max_steps);

    let mut hasher = DefaultHasher::new();
    let mut log = Vec::new();
    let mut step = start_step;
    let mut consumed = 0usize;
    let mut last_good: Option<PathBuf> = options.resume.clone();
    let mut last_loss = None;
    let mut epoch = 0usize;
    'outer: while step < stop {
        let order = epoch_order(data.len(), tc.seed, epoch);
        for batch in make_batches(&order, &base_frames, tc.max_frames_per_batch) {
            if step >= stop {
                break 'outer;
            }
            let ids: Vec<String> = batch.iter().map(|&i| data.utterances[i].id.clone()).collect();
            ids.hash(&mut hasher);
            consumed += 1;
            if consumed <= start_step {
                continue;
            }
            let views: Vec<Utterance> = batch
                .iter()
                .map(|&i| training_view(&data.utterances[i], i, max_len, tc.seed, epoch))
                .collect::<Result<_>>()?;
            let refs: Vec<&Utterance> = views.iter().collect();
            let (loss, terms, matched) = batch_loss(&model, config, &refs, |j| Some(dropout_seed(tc.seed, step, j)))?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: step + 1,
                    loss: value,
                    last_good,
                });
            }
            let grads = loss.backward()?;
            let stats = opt.step(model.store(), &grads, tc.max_steps).map_err(|_| Error::Diverged {
                step: step + 1,
                loss: value,
                last_good: last_good.clone(),
            })?;
            step += 1;
            last_loss = Some(value);
            let line = StepLog {
                step,
                epoch,
                learning_rate: stats.learning_rate,
                loss: value,
                dia: terms[1],
                ovr: terms[2],
                act: terms[3],
                grad_norm: stats.grad_norm,
                utterances: ids,
                matched,
            };
            serde_json::to_writer(&mut log_writer, &line)?;
            log_writer.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
            log::debug!("step {step} loss {value:.5} lr {:.2e}", stats.learning_rate);
            log.push(line);
            if tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 {
                let dir = out_dir.join("checkpoints").join(format!("step-{step:06}"));
                let state = CheckpointState {
                    config: config.clone(),
                    stage: config.stage,
                    step,
                    init: init.clone(),
                    batch_order_hash: hasher.finish(),
                    last_loss,
                };
                save_checkpoint(&dir, &model, &opt, &state)?;
                last_good = Some(dir);
            }
        }
        epoch += 1;
    }
    log_writer.flush().map_err(|e| Error::io(&log_path, e))?;
    let batch_order_hash = hasher.finish();
    let final_dir = out_dir.join(FINAL_DIR);
    let state = CheckpointState {
        config: config.clone(),
        stage: config.stage,
        step,
        init,
        batch_order_hash,
        last_loss,
    };
    save_checkpoint(&final_dir, &model, &opt, &state)?;
    Ok(TrainOutcome {
        final_checkpoint: final_dir,
        steps: step,
        log,
        batch_order_hash,
    })
}
