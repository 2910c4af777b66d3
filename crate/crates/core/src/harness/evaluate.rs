//! Long-form decoding and corpus evaluation in ideal and practical modes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::track_label;
use crate::error::{Error, Result};
use crate::io::write_rttm;
use crate::losses::hungarian_match;
use crate::metrics::{format_row, score_corpus_frames, score_frames, ScoringMode};
use crate::model::LanguageDiarizer;
use crate::raster::label_matrix_to_segments;
use crate::types::{ChannelRole, DerBreakdown, LabelMatrix, WaveformBuffer};

use super::config::{EvalConfig, ExperimentConfig};
use super::data::Dataset;

/// Decode a recording of any length. Inputs longer than the window are decoded in
/// overlapping windows; language tracks of each window are matched to the running
/// tracks by overlap agreement, and values are averaged where windows overlap.
pub fn decode_long(model: &LanguageDiarizer, wav: &WaveformBuffer, eval: &EvalConfig) -> Result<LabelMatrix> {
    let cfg = model.config();
    let period = model.frame_period()?;
    let frames_total = cfg.frames_for(wav.len())?;
    let samples_per_frame = (period * wav.sample_rate() as f64).round() as usize;
    let win_frames = ((eval.window / period).round() as usize).max(1);
    let hop_frames = ((eval.hop / period).round() as usize).max(1);
    if frames_total <= win_frames {
        return model.diarize(wav);
    }
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * hop_frames)
        .take_while(|&s| s + win_frames < frames_total)
        .collect();
    starts.push(frames_total - win_frames);
    starts.dedup();

    let mut vad = vec![0.0f64; frames_total];
    let mut count = vec![0.0f64; frames_total];
    let mut tracks: Vec<Vec<f64>> = Vec::new();
    for &start in &starts {
        let a = start * samples_per_frame;
        let b = (a + win_frames * samples_per_frame).min(wav.len());
        let lm = model.diarize(&wav.slice(a, b)?)?;
        let n = lm.frames().min(frames_total - start);
        let rows: Vec<Vec<f64>> = lm.language_channels().map(|k| lm.values().row(k).to_vec()).collect();
        // agreement with the running average over frames already covered
        let cost: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                tracks
                    .iter()
                    .map(|g| {
                        -(0..n)
                            .filter(|&t| count[start + t] > 0.0)
                            .map(|t| r[t] * g[start + t] / count[start + t])
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let assignment = hungarian_match(&cost)?;
        let mut target_of = vec![usize::MAX; rows.len()];
        for &(i, g) in &assignment.pairs {
            target_of[i] = g;
        }
        for slot in target_of.iter_mut().filter(|s| **s == usize::MAX) {
            tracks.push(vec![0.0; frames_total]);
            *slot = tracks.len() - 1;
        }
        for t in 0..n {
            vad[start + t] += lm.values()[[0, t]];
            count[start + t] += 1.0;
        }
        for (i, r) in rows.iter().enumerate() {
            let g = &mut tracks[target_of[i]];
            for t in 0..n {
                g[start + t] += r[t];
            }
        }
    }
    let mut roles = vec![ChannelRole::Vad];
    roles.extend((0..tracks.len()).map(|i| ChannelRole::language(track_label(i + 1))));
    let mut values = ndarray::Array2::<f64>::zeros((roles.len(), frames_total));
    for t in 0..frames_total {
        let c = count[t].max(1.0);
        values[[0, t]] = (vad[t] / c).clamp(0.0, 1.0);
        for (i, g) in tracks.iter().enumerate() {
            values[[i + 1, t]] = (g[t] / c).clamp(0.0, 1.0);
        }
    }
    LabelMatrix::new(values, period, roles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub ideal: DerBreakdown,
    pub practical: DerBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ideal: DerBreakdown,
    pub practical: DerBreakdown,
    pub utterances: Vec<UtteranceScore>,
    /// (utterance id, error) for recordings that could not be decoded or scored.
    pub failures: Vec<(String, String)>,
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn table(&self, name: &str) -> String {
        format!(
            "{:<24} {:>6}  {}\n{}\n",
            "system",
            "Ideal",
            "Practical DER (FA/Miss/Conf)",
            format_row(name, Some(&self.ideal), &self.practical)
        )
    }
}

pub const IDEAL_NOTE: &str = "ideal mode: hypothesis VAD replaced by the reference VAD; reference speech frames without an active hypothesis language take the highest raw language score (nearest decided frame if all scores are zero)";

/// Decode every utterance, write hypothesis RTTMs and reports under `out_dir` (when
/// given), and score the corpus in both modes.
pub fn evaluate(model: &LanguageDiarizer, data: &Dataset, config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<EvaluationReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let scoring = &config.metrics;
    let results: Vec<std::result::Result<(String, LabelMatrix, LabelMatrix), (String, String)>> = data
        .utterances
        .par_iter()
        .map(|u| {
            let r = (|| {
                let hyp = decode_long(model, &u.audio, &config.eval)?;
                let reference = model.target_for(&u.labels, &u.inventory()?, u.audio.len())?;
                Ok::<_, Error>((u.id.clone(), reference, hyp))
            })();
            r.map_err(|e| (u.id.clone(), e.to_string()))
        })
        .collect();

    let mut failures = Vec::new();
    let mut scored = Vec::new();
    let mut utterances = Vec::new();
    for r in results {
        match r {
            Ok((id, reference, hyp)) => {
                let ideal = score_frames(&reference, &hyp, &scoring.with_mode(ScoringMode::Ideal));
                let practical = score_frames(&reference, &hyp, &scoring.with_mode(ScoringMode::Practical));
                match (ideal, practical) {
                    (Ok(ideal), Ok(practical)) => {
                        utterances.push(UtteranceScore {
                            id: id.clone(),
                            ideal,
                            practical,
                        });
                        scored.push((id, reference, hyp));
                    }
                    (Err(e), _) | (_, Err(e)) => failures.push((id, e.to_string())),
                }
            }
            Err(f) => failures.push(f),
        }
    }
    for (id, e) in &failures {
        log::warn!("evaluation skipped `{id}`: {e}");
    }
    if scored.is_empty() {
        return Err(Error::invalid(format!("no utterance could be scored ({} failures)", failures.len())));
    }
    let report = EvaluationReport {
        ideal: score_corpus_frames(&scored, &scoring.with_mode(ScoringMode::Ideal))?,
        practical: score_corpus_frames(&scored, &scoring.with_mode(ScoringMode::Practical))?,
        utterances,
        failures,
        notes: vec![IDEAL_NOTE.to_string()],
    };
    if let Some(dir) = out_dir {
        let rttm_dir = dir.join("rttm");
        std::fs::create_dir_all(&rttm_dir).map_err(|e| Error::io(&rttm_dir, e))?;
        for (id, _, hyp) in &scored {
            let ann = label_matrix_to_segments(hyp, id, scoring.threshold, config.eval.min_segment)?;
            write_rttm(&[ann], rttm_dir.join(format!("{id}.rttm")))?;
        }
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, report.table("model")).map_err(|e| Error::io(&txt, e))?;
    }
    Ok(report)
}
