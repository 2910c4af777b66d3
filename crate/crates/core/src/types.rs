//! Domain types shared by every stage of the pipeline.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used for explicit voice-activity segments in annotations and RTTM files.
pub const VAD_LABEL: &str = "speech";

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
    source_id: String,
}

impl WaveformBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power over the whole buffer.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn with_samples(&self, samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, self.sample_rate, self.source_id.clone())
    }

    /// Copy of `[start, end)` in samples.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.samples.len() {
            return Err(Error::invalid(format!(
                "slice [{start}, {end}) out of range for {} samples",
                self.samples.len()
            )));
        }
        self.with_samples(self.samples[start..end].to_vec())
    }
}

/// Ordered set of languages and their matrix/embedded role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageInventory {
    languages: Vec<String>,
    embedded: Vec<bool>,
}

impl LanguageInventory {
    pub fn new(languages: Vec<String>, embedded: Vec<bool>) -> Result<Self> {
        if languages.is_empty() {
            return Err(Error::invalid("language inventory must not be empty"));
        }
        if languages.len() != embedded.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} embedded flags", languages.len()),
                actual: embedded.len().to_string(),
            });
        }
        for (i, code) in languages.iter().enumerate() {
            if code == VAD_LABEL {
                return Err(Error::invalid(format!("`{VAD_LABEL}` is reserved for voice activity")));
            }
            if code.is_empty() || code.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid language code `{code}`")));
            }
            if languages[..i].contains(code) {
                return Err(Error::invalid(format!("duplicate language code `{code}`")));
            }
        }
        Ok(Self { languages, embedded })
    }

    /// Inventory where every language plays the matrix role.
    pub fn matrix_only<S: AsRef<str>>(codes: &[S]) -> Result<Self> {
        let languages: Vec<String> = codes.iter().map(|c| c.as_ref().to_string()).collect();
        let embedded = vec![false; languages.len()];
        Self::new(languages, embedded)
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == code)
    }

    pub fn is_embedded(&self, code: &str) -> bool {
        self.index_of(code).map(|i| self.embedded[i]).unwrap_or(false)
    }
}

/// What a row of a [`LabelMatrix`] means.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelRole {
    Vad,
    Language { code: String, embedded: bool },
}

impl ChannelRole {
    pub fn language(code: impl Into<String>) -> Self {
        ChannelRole::Language {
            code: code.into(),
            embedded: false,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            ChannelRole::Vad => VAD_LABEL,
            ChannelRole::Language { code, .. } => code,
        }
    }

    pub fn is_embedded(&self) -> bool {
        matches!(self, ChannelRole::Language { embedded: true, .. })
    }
}

/// Per-frame activity, `channels x frames`, channel 0 is always VAD.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    values: Array2<f64>,
    frame_period: f64,
    roles: Vec<ChannelRole>,
}

impl LabelMatrix {
    pub fn new(values: Array2<f64>, frame_period: f64, roles: Vec<ChannelRole>) -> Result<Self> {
        if !(frame_period > 0.0) {
            return Err(Error::invalid("frame period must be positive"));
        }
        if roles.len() != values.nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channel roles", values.nrows()),
                actual: roles.len().to_string(),
            });
        }
        if roles.first() != Some(&ChannelRole::Vad) {
            return Err(Error::invalid("channel 0 of a label matrix must be VAD"));
        }
        if roles[1..].iter().any(|r| *r == ChannelRole::Vad) {
            return Err(Error::invalid("only channel 0 may be VAD"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("label value {v} outside [0, 1]")));
        }
        Ok(Self {
            values,
            frame_period,
            roles,
        })
    }

    /// All-zero matrix.
    pub fn zeros(frames: usize, frame_period: f64, roles: Vec<ChannelRole>) -> Result<Self> {
        Self::new(Array2::zeros((roles.len(), frames)), frame_period, roles)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    pub fn roles(&self) -> &[ChannelRole] {
        &self.roles
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 * self.frame_period
    }

    pub fn vad(&self) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(0)
    }

    /// Language channel indices (all rows except 0).
    pub fn language_channels(&self) -> std::ops::Range<usize> {
        1..self.channels()
    }

    pub fn channel_of(&self, code: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.label() == code && *r != ChannelRole::Vad)
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Language activity implies VAD activity, frame by frame.
    pub fn is_vad_dominant(&self) -> bool {
        (0..self.frames()).all(|t| {
            self.language_channels()
                .all(|k| self.values[[k, t]] <= self.values[[0, t]])
        })
    }

    /// Keep only the listed language channels (VAD is always kept as channel 0).
    pub fn select_languages(&self, channels: &[usize]) -> Result<Self> {
        let mut rows = vec![0usize];
        rows.extend_from_slice(channels);
        let values = self.values.select(ndarray::Axis(0), &rows);
        let roles = rows.iter().map(|&r| self.roles[r].clone()).collect();
        Self::new(values, self.frame_period, roles)
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl Segment {
    pub fn new(start: f64, end: f64, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Labelled time spans of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub recording_id: String,
    pub segments: Vec<Segment>,
}

impl SegmentAnnotation {
    pub fn new(recording_id: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            if !(s.start.is_finite() && s.end.is_finite()) {
                return Err(Error::NonFinite(format!("segment {s:?}")));
            }
            if s.end <= s.start {
                return Err(Error::invalid(format!(
                    "segment end {} must exceed start {} ({})",
                    s.end, s.start, s.label
                )));
            }
            if s.start < 0.0 {
                return Err(Error::invalid(format!("segment starts before 0: {}", s.start)));
            }
        }
        Ok(Self {
            recording_id: recording_id.into(),
            segments,
        })
    }

    pub fn empty(recording_id: impl Into<String>) -> Self {
        Self {
            recording_id: recording_id.into(),
            segments: Vec::new(),
        }
    }

    /// Union overlapping or touching segments that share a label and sort by (start, label).
    /// Segments with different labels are left untouched, overlap included.
    pub fn normalized(mut self) -> Self {
        self.segments.sort_by(|a, b| {
            a.label
                .cmp(&b.label)
                .then(a.start.total_cmp(&b.start))
                .then(a.end.total_cmp(&b.end))
        });
        let mut merged: Vec<Segment> = Vec::with_capacity(self.segments.len());
        for seg in self.segments {
            match merged.last_mut() {
                Some(last) if last.label == seg.label && seg.start <= last.end => {
                    last.end = last.end.max(seg.end);
                }
                _ => merged.push(seg),
            }
        }
        merged.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.label.cmp(&b.label)));
        self.segments = merged;
        self
    }

    pub fn end_time(&self) -> f64 {
        self.segments.iter().map(|s| s.end).fold(0.0, f64::max)
    }

    /// Distinct non-VAD labels in order of first appearance.
    pub fn languages(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.segments {
            if s.label != VAD_LABEL && !out.contains(&s.label) {
                out.push(s.label.clone());
            }
        }
        out
    }

    /// Total duration per label, summed over segments.
    pub fn total_duration(&self, label: &str) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.label == label)
            .map(Segment::duration)
            .sum()
    }
}

/// Frame counts behind a DER value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub false_alarm: u64,
    pub miss: u64,
    pub confusion: u64,
    /// Reference speech frames that were scored (the denominator).
    pub speech: u64,
}

impl std::ops::AddAssign for FrameCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.false_alarm += rhs.false_alarm;
        self.miss += rhs.miss;
        self.confusion += rhs.confusion;
        self.speech += rhs.speech;
    }
}

/// Diarization error rate and its decomposition, all as fractions of scored speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerBreakdown {
    pub false_alarm: f64,
    pub miss: f64,
    pub confusion: f64,
    pub der: f64,
    pub scored_frames: u64,
    pub counts: FrameCounts,
}

impl DerBreakdown {
    pub fn from_counts(counts: FrameCounts) -> Result<Self> {
        if counts.speech == 0 {
            return Err(Error::invalid("reference contains no scored speech; DER is undefined"));
        }
        let denom = counts.speech as f64;
        // der is computed from the summed count so the decomposition identity holds at frame resolution.
        Ok(Self {
            false_alarm: counts.false_alarm as f64 / denom,
            miss: counts.miss as f64 / denom,
            confusion: counts.confusion as f64 / denom,
            der: (counts.false_alarm + counts.miss + counts.confusion) as f64 / denom,
            scored_frames: counts.speech,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(WaveformBuffer::new(vec![], 16000, "a").is_err());
        assert!(WaveformBuffer::new(vec![0.0], 0, "a").is_err());
        assert!(WaveformBuffer::new(vec![f32::NAN], 16000, "a").is_err());
        let w = WaveformBuffer::new(vec![0.5; 16000], 16000, "a").unwrap();
        assert_eq!(w.duration(), 1.0);
        assert!((w.power() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn inventory_rejects_duplicates_and_reserved() {
        assert!(LanguageInventory::matrix_only(&["en", "en"]).is_err());
        assert!(LanguageInventory::matrix_only::<&str>(&[]).is_err());
        assert!(LanguageInventory::matrix_only(&[VAD_LABEL]).is_err());
        let inv = LanguageInventory::new(vec!["en".into(), "hi".into()], vec![false, true]).unwrap();
        assert!(inv.is_embedded("hi"));
        assert!(!inv.is_embedded("en"));
    }

    #[test]
    fn label_matrix_requires_vad_first() {
        let roles = vec![ChannelRole::language("en"), ChannelRole::Vad];
        assert!(LabelMatrix::zeros(4, 0.025, roles).is_err());
        let roles = vec![ChannelRole::Vad, ChannelRole::language("en")];
        let m = LabelMatrix::zeros(4, 0.025, roles).unwrap();
        assert_eq!((m.channels(), m.frames()), (2, 4));
        let bad = Array2::from_elem((2, 4), 1.5);
        assert!(LabelMatrix::new(bad, 0.025, m.roles().to_vec()).is_err());
    }

    #[test]
    fn normalization_unions_same_label_only() {
        let ann = SegmentAnnotation::new(
            "r",
            vec![
                Segment::new(0.5, 1.5, "en"),
                Segment::new(0.0, 1.0, "en"),
                Segment::new(0.8, 2.0, "hi"),
            ],
        )
        .unwrap()
        .normalized();
        assert_eq!(
            ann.segments,
            vec![Segment::new(0.0, 1.5, "en"), Segment::new(0.8, 2.0, "hi")]
        );
    }

    #[test]
    fn der_identity_from_counts() {
        let b = DerBreakdown::from_counts(FrameCounts {
            false_alarm: 3,
            miss: 5,
            confusion: 7,
            speech: 100,
        })
        .unwrap();
        assert_eq!(b.der, 0.15);
        assert!((b.false_alarm + b.miss + b.confusion - b.der).abs() < 1e-9);
        assert!(DerBreakdown::from_counts(FrameCounts::default()).is_err());
    }
}
