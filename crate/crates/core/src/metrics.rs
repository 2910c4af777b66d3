//! Frame-based diarization error rate with false alarm / miss / confusion breakdown.
//!
//! Practical mode scores the hypothesis as is. Ideal mode first replaces the
//! hypothesis VAD with the reference VAD ([`apply_oracle_vad`]), so only language
//! confusion remains.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::hungarian_match;
use crate::raster::{frame_center, frame_count, segments_to_label_matrix};
use crate::types::{ChannelRole, DerBreakdown, FrameCounts, LabelMatrix, LanguageInventory, SegmentAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    Ideal,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    /// One language per frame: the highest-valued hypothesis channel must be one of the
    /// reference languages. Tied channels must all be.
    Argmax,
    /// The set of active hypothesis languages must equal the reference set.
    MultiLabel,
}

/// How hypothesis channel labels are matched to reference language labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMapping {
    /// Labels must be identical strings.
    Literal,
    /// One-to-one mapping maximizing agreement, for anonymous language tracks.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub mode: ScoringMode,
    /// Seconds excluded on each side of every reference boundary.
    pub collar: f64,
    pub frame_period: f64,
    pub overlap_policy: OverlapPolicy,
    pub label_mapping: LabelMapping,
    /// Activity threshold for soft hypotheses.
    pub threshold: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            mode: ScoringMode::Practical,
            collar: 0.0,
            frame_period: 0.025,
            overlap_policy: OverlapPolicy::Argmax,
            label_mapping: LabelMapping::Literal,
            threshold: 0.5,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.collar >= 0.0) {
            return Err(Error::invalid("collar must be non-negative"));
        }
        if !(self.frame_period > 0.0) {
            return Err(Error::invalid("frame period must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: ScoringMode) -> Self {
        Self { mode, ..self.clone() }
    }
}

/// Language channels sharing the highest non-zero value at frame `t`. Ties are kept
/// together so the result does not depend on channel order.
fn top_languages(m: &LabelMatrix, t: usize) -> Vec<usize> {
    let best = m.language_channels().map(|k| m.values()[[k, t]]).fold(0.0, f64::max);
    if best <= 0.0 {
        return Vec::new();
    }
    m.language_channels().filter(|&k| m.values()[[k, t]] == best).collect()
}

/// Gate the hypothesis with the reference VAD: VAD is replaced by the reference,
/// language channels are zeroed outside reference speech, and reference speech frames
/// with no active hypothesis language get the hypothesis's best languages for that frame
/// (highest raw value; for all-zero frames, those of the nearest frame that has one).
pub fn apply_oracle_vad(hypothesis: &LabelMatrix, reference_vad: &[bool], threshold: f64) -> Result<LabelMatrix> {
    let t_len = hypothesis.frames();
    if reference_vad.len() != t_len {
        return Err(Error::ShapeMismatch {
            expected: format!("{t_len} reference VAD frames"),
            actual: reference_vad.len().to_string(),
        });
    }
    let mut out = hypothesis.clone();
    let raw_top: Vec<Vec<usize>> = (0..t_len).map(|t| top_languages(hypothesis, t)).collect();
    let langs = hypothesis.language_channels();
    {
        let values = out.values_mut();
        for t in 0..t_len {
            if !reference_vad[t] {
                values[[0, t]] = 0.0;
                for k in langs.clone() {
                    values[[k, t]] = 0.0;
                }
                continue;
            }
            values[[0, t]] = 1.0;
            let has_language = langs.clone().any(|k| values[[k, t]] >= threshold);
            if has_language {
                continue;
            }
            let fill = if raw_top[t].is_empty() { nearest_top(&raw_top, t) } else { &raw_top[t] };
            for &k in fill {
                values[[k, t]] = 1.0;
            }
        }
    }
    Ok(out)
}

fn nearest_top(tops: &[Vec<usize>], t: usize) -> &[usize] {
    for d in 1..tops.len() {
        if t >= d && !tops[t - d].is_empty() {
            return &tops[t - d];
        }
        if t + d < tops.len() && !tops[t + d].is_empty() {
            return &tops[t + d];
        }
    }
    &[]
}

/// Frames excluded by the collar around reference boundaries.
fn collar_mask(reference: &LabelMatrix, collar: f64) -> Vec<bool> {
    let t_len = reference.frames();
    let mut excluded = vec![false; t_len];
    if collar <= 0.0 || t_len == 0 {
        return excluded;
    }
    let p = reference.frame_period();
    let state = |t: usize| -> Vec<bool> { (0..reference.channels()).map(|k| reference.values()[[k, t]] >= 0.5).collect() };
    let mut boundaries = Vec::new();
    if state(0).iter().any(|&b| b) {
        boundaries.push(0.0);
    }
    for t in 1..t_len {
        if state(t) != state(t - 1) {
            boundaries.push(t as f64 * p);
        }
    }
    if state(t_len - 1).iter().any(|&b| b) {
        boundaries.push(t_len as f64 * p);
    }
    for (t, ex) in excluded.iter_mut().enumerate() {
        let c = frame_center(t, p);
        *ex = boundaries.iter().any(|&b| (c - b).abs() < collar);
    }
    excluded
}

/// Map each hypothesis channel (index into hypothesis rows) to a reference channel, if any.
fn label_map(reference: &LabelMatrix, hypothesis: &LabelMatrix, config: &ScoringConfig, scored: &[bool]) -> Result<Vec<Option<usize>>> {
    let mut map = vec![None; hypothesis.channels()];
    match config.label_mapping {
        LabelMapping::Literal => {
            for k in hypothesis.language_channels() {
                map[k] = reference.channel_of(hypothesis.roles()[k].label());
            }
        }
        LabelMapping::Optimal => {
            let hyp: Vec<usize> = hypothesis.language_channels().collect();
            let refs: Vec<usize> = reference.language_channels().collect();
            if hyp.is_empty() || refs.is_empty() {
                return Ok(map);
            }
            let mut agree = vec![vec![0.0f64; refs.len()]; hyp.len()];
            for t in 0..reference.frames() {
                if !scored[t] || reference.values()[[0, t]] < 0.5 || hypothesis.values()[[0, t]] < config.threshold {
                    continue;
                }
                match config.overlap_policy {
                    OverlapPolicy::Argmax => {
                        for h in top_languages(hypothesis, t) {
                            for (j, &r) in refs.iter().enumerate() {
                                if reference.values()[[r, t]] >= 0.5 {
                                    agree[h - 1][j] += 1.0;
                                }
                            }
                        }
                    }
                    OverlapPolicy::MultiLabel => {
                        for (i, &h) in hyp.iter().enumerate() {
                            if hypothesis.values()[[h, t]] < config.threshold {
                                continue;
                            }
                            for (j, &r) in refs.iter().enumerate() {
                                if reference.values()[[r, t]] >= 0.5 {
                                    agree[i][j] += 1.0;
                                }
                            }
                        }
                    }
                }
            }
            let cost: Vec<Vec<f64>> = agree.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
            for (i, j) in hungarian_match(&cost)?.pairs {
                map[hyp[i]] = Some(refs[j]);
            }
        }
    }
    Ok(map)
}

/// Score a soft or binary hypothesis against a binary reference on the same frame grid.
pub fn score_frames(reference: &LabelMatrix, hypothesis: &LabelMatrix, config: &ScoringConfig) -> Result<DerBreakdown> {
    config.validate()?;
    if reference.frames() != hypothesis.frames() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} hypothesis frames", reference.frames()),
            actual: hypothesis.frames().to_string(),
        });
    }
    if (reference.frame_period() - hypothesis.frame_period()).abs() > 1e-9 {
        return Err(Error::invalid("reference and hypothesis frame periods differ"));
    }
    let ref_vad: Vec<bool> = reference.vad().iter().map(|&v| v >= 0.5).collect();
    let gated;
    let hyp = match config.mode {
        ScoringMode::Practical => hypothesis,
        ScoringMode::Ideal => {
            gated = apply_oracle_vad(hypothesis, &ref_vad, config.threshold)?;
            &gated
        }
    };
    let excluded = collar_mask(reference, config.collar);
    let scored: Vec<bool> = excluded.iter().map(|e| !e).collect();
    let map = label_map(reference, hyp, config, &scored)?;

    let mut counts = FrameCounts::default();
    for t in 0..reference.frames() {
        if !scored[t] {
            continue;
        }
        let r = ref_vad[t];
        let h = hyp.values()[[0, t]] >= config.threshold;
        match (r, h) {
            (false, true) => counts.false_alarm += 1,
            (true, false) => counts.miss += 1,
            (true, true) => {
                let ref_langs: BTreeSet<usize> = reference
                    .language_channels()
                    .filter(|&k| reference.values()[[k, t]] >= 0.5)
                    .collect();
                // speech without a language label is not scored for confusion
                if !ref_langs.is_empty() {
                    let confused = match config.overlap_policy {
                        OverlapPolicy::Argmax => {
                            let tops = top_languages(hyp, t);
                            tops.is_empty() || tops.iter().any(|&k| map[k].map_or(true, |m| !ref_langs.contains(&m)))
                        }
                        OverlapPolicy::MultiLabel => {
                            let mut hyp_langs = BTreeSet::new();
                            let mut unmapped = false;
                            for k in hyp.language_channels() {
                                if hyp.values()[[k, t]] >= config.threshold {
                                    match map[k] {
                                        Some(m) => {
                                            hyp_langs.insert(m);
                                        }
                                        None => unmapped = true,
                                    }
                                }
                            }
                            unmapped || hyp_langs != ref_langs
                        }
                    };
                    if confused {
                        counts.confusion += 1;
                    }
                }
            }
            (false, false) => {}
        }
        if r {
            counts.speech += 1;
        }
    }
    DerBreakdown::from_counts(counts)
}

fn inventory_of(ann: &SegmentAnnotation) -> Option<LanguageInventory> {
    let mut langs = ann.languages();
    langs.sort();
    if langs.is_empty() {
        None
    } else {
        LanguageInventory::matrix_only(&langs).ok()
    }
}

/// Rasterize an annotation on the scoring grid, VAD-only when it has no language.
pub fn rasterize(ann: &SegmentAnnotation, frame_period: f64, duration: f64) -> Result<LabelMatrix> {
    match inventory_of(ann) {
        Some(inv) => segments_to_label_matrix(ann, &inv, frame_period, duration),
        None => {
            let frames = frame_count(duration, frame_period);
            let mut m = LabelMatrix::zeros(frames, frame_period, vec![ChannelRole::Vad])?;
            for seg in &ann.segments {
                for t in 0..frames {
                    let c = frame_center(t, frame_period);
                    if seg.start <= c && c < seg.end {
                        m.values_mut()[[0, t]] = 1.0;
                    }
                }
            }
            Ok(m)
        }
    }
}

/// Frame-based DER of one recording.
pub fn score(reference: &SegmentAnnotation, hypothesis: &SegmentAnnotation, config: &ScoringConfig) -> Result<DerBreakdown> {
    config.validate()?;
    let duration = reference.end_time().max(hypothesis.end_time());
    if !(duration > 0.0) {
        return Err(Error::invalid("reference contains no speech; DER is undefined"));
    }
    let r = rasterize(reference, config.frame_period, duration)?;
    let h = rasterize(hypothesis, config.frame_period, duration)?;
    score_frames(&r, &h, config)
}

/// Corpus DER: frame counts summed over recordings, then normalized once.
pub fn score_corpus(pairs: &[(SegmentAnnotation, SegmentAnnotation)], config: &ScoringConfig) -> Result<DerBreakdown> {
    if pairs.is_empty() {
        return Err(Error::invalid("no recordings to score"));
    }
    let mut total = FrameCounts::default();
    for (reference, hypothesis) in pairs {
        let b = score(reference, hypothesis, config).map_err(|e| Error::Utterance {
            id: reference.recording_id.clone(),
            source: Box::new(e),
        })?;
        total += b.counts;
    }
    DerBreakdown::from_counts(total)
}

/// Corpus DER from already-rasterized (reference, hypothesis) matrices.
pub fn score_corpus_frames(pairs: &[(String, LabelMatrix, LabelMatrix)], config: &ScoringConfig) -> Result<DerBreakdown> {
    if pairs.is_empty() {
        return Err(Error::invalid("no recordings to score"));
    }
    let mut total = FrameCounts::default();
    for (id, reference, hypothesis) in pairs {
        let b = score_frames(reference, hypothesis, config).map_err(|e| Error::Utterance {
            id: id.clone(),
            source: Box::new(e),
        })?;
        total += b.counts;
    }
    DerBreakdown::from_counts(total)
}

/// Nearest-frame resampling of a label matrix onto another grid.
pub fn resample(m: &LabelMatrix, frame_period: f64, frames: usize) -> Result<LabelMatrix> {
    let src = m.frames();
    let mut values = Array2::<f64>::zeros((m.channels(), frames));
    if src > 0 {
        for t in 0..frames {
            let s = ((frame_center(t, frame_period) / m.frame_period()).floor() as usize).min(src - 1);
            for k in 0..m.channels() {
                values[[k, t]] = m.values()[[k, s]];
            }
        }
    }
    LabelMatrix::new(values, frame_period, m.roles().to_vec())
}

/// Human-readable row in the "DER (FA / Miss / Conf)" layout, percentages.
pub fn format_row(name: &str, ideal: Option<&DerBreakdown>, practical: &DerBreakdown) -> String {
    let ideal = ideal.map(|b| format!("{:6.2}", 100.0 * b.der)).unwrap_or_else(|| "   N/A".into());
    format!(
        "{name:<24} {ideal}  {:6.2} ({:.2}/{:.2}/{:.2})",
        100.0 * practical.der,
        100.0 * practical.false_alarm,
        100.0 * practical.miss,
        100.0 * practical.confusion
    )
}
