//! Simulated code-switching utterances built from monolingual pools.

mod augment;
mod corpus;
pub mod toy;
mod vc;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::resolve;
use crate::io::{read_jsonl, read_wav, SourceRecord};
use crate::types::{Segment, SegmentAnnotation, WaveformBuffer};

pub use augment::{apply_rir, augment, draw_augmentation, fft_convolve, mix_noise, mix_noise_parts, AugmentDraw, NoisyMixture};
pub use corpus::{build_corpus, plan_recipes, CorpusEntry, CorpusManifest, CorpusPools, PlanOptions};
pub use vc::{CommandVc, IdentityVc, VoiceConversion};

const BUILD_STREAM: u64 = 0;
const AUGMENT_STREAM: u64 = 1;

pub(crate) fn recipe_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationRecipe {
    pub matrix_language: String,
    pub embedded_languages: Vec<String>,
    /// Seconds.
    pub target_duration: f64,
    /// Fraction of the duration spoken in embedded languages.
    pub embedded_ratio: f64,
    pub seed: u64,
    pub augment_probability: f64,
    pub snr_choices_db: Vec<f64>,
    /// Bounds on individual segment lengths, seconds.
    pub min_segment: f64,
    pub max_segment: f64,
    /// Crossfade at each join, seconds. Label boundaries sit at its midpoint.
    pub crossfade: f64,
}

impl Default for SimulationRecipe {
    fn default() -> Self {
        Self {
            matrix_language: String::new(),
            embedded_languages: Vec::new(),
            target_duration: 10.0,
            embedded_ratio: 0.3,
            seed: 0,
            augment_probability: 0.5,
            snr_choices_db: vec![5.0, 10.0, 15.0, 20.0],
            min_segment: 1.0,
            max_segment: 4.0,
            crossfade: 0.01,
        }
    }
}

impl SimulationRecipe {
    pub fn new(matrix: impl Into<String>, embedded: &[&str], target_duration: f64, embedded_ratio: f64, seed: u64) -> Self {
        Self {
            matrix_language: matrix.into(),
            embedded_languages: embedded.iter().map(|s| s.to_string()).collect(),
            target_duration,
            embedded_ratio,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix_language.is_empty() {
            return Err(Error::invalid("matrix language is empty"));
        }
        if self.embedded_languages.is_empty() {
            return Err(Error::invalid("recipe needs at least one embedded language"));
        }
        if self.embedded_languages.contains(&self.matrix_language) {
            return Err(Error::invalid(format!(
                "matrix language `{}` is also listed as embedded",
                self.matrix_language
            )));
        }
        if !(self.embedded_ratio > 0.0 && self.embedded_ratio < 1.0) {
            return Err(Error::invalid(format!("embedded ratio {} outside (0, 1)", self.embedded_ratio)));
        }
        if !(self.target_duration > 0.0) {
            return Err(Error::invalid("target duration must be positive"));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::invalid("augment probability outside [0, 1]"));
        }
        if self.snr_choices_db.is_empty() || self.snr_choices_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("SNR choices must be a non-empty list of finite values"));
        }
        if !(self.min_segment > 0.0 && self.max_segment >= self.min_segment) {
            return Err(Error::invalid("segment bounds must satisfy 0 < min <= max"));
        }
        if !(self.crossfade >= 0.0 && self.crossfade < self.min_segment) {
            return Err(Error::invalid("crossfade must be non-negative and shorter than a segment"));
        }
        let embedded = self.target_duration * self.embedded_ratio;
        if embedded.min(self.target_duration - embedded) < self.min_segment {
            return Err(Error::invalid(format!(
                "a {:.2} s utterance at embedded ratio {:.2} leaves a share shorter than one {:.2} s segment",
                self.target_duration, self.embedded_ratio, self.min_segment
            )));
        }
        Ok(())
    }

    pub fn languages(&self) -> Vec<String> {
        let mut v = vec![self.matrix_language.clone()];
        v.extend(self.embedded_languages.iter().cloned());
        v
    }

    /// "matrix-embedded[+embedded..]".
    pub fn pair_key(&self) -> String {
        format!("{}-{}", self.matrix_language, self.embedded_languages.join("+"))
    }

    pub fn utterance_id(&self) -> String {
        format!("cs-{}-{:010}", self.pair_key(), self.seed)
    }
}

/// Where one label span came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub speaker: String,
    pub language: String,
    /// Span inside the source, seconds.
    pub source_start: f64,
    pub source_end: f64,
    /// Label span inside the simulated utterance, seconds.
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedUtterance {
    pub audio: WaveformBuffer,
    pub labels: SegmentAnnotation,
    pub provenance: Vec<Provenance>,
    pub augmented: bool,
    pub applied_snr_db: Option<f64>,
    pub rir_id: Option<String>,
    pub noise_id: Option<String>,
}

impl SimulatedUtterance {
    pub fn embedded_duration(&self, matrix_language: &str) -> f64 {
        self.labels
            .segments
            .iter()
            .filter(|s| s.label != matrix_language)
            .map(Segment::duration)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub audio: WaveformBuffer,
    pub language: String,
    pub speaker: String,
    pub family: Option<String>,
}

/// Monolingual utterances grouped by language.
#[derive(Debug, Clone, Default)]
pub struct SourcePool {
    by_language: BTreeMap<String, Vec<PoolEntry>>,
}

impl SourcePool {
    pub fn new(entries: Vec<PoolEntry>) -> Result<Self> {
        let mut pool = Self::default();
        for e in entries {
            pool.push(e)?;
        }
        Ok(pool)
    }

    pub fn push(&mut self, entry: PoolEntry) -> Result<()> {
        if let Some(sr) = self.sample_rate() {
            if sr != entry.audio.sample_rate() {
                return Err(Error::invalid(format!(
                    "source `{}` has sample rate {}, pool uses {sr}",
                    entry.audio.source_id(),
                    entry.audio.sample_rate()
                )));
            }
        }
        self.by_language.entry(entry.language.clone()).or_default().push(entry);
        Ok(())
    }

    /// Load a JSON-lines manifest of [`SourceRecord`]s, optionally keeping one family.
    pub fn from_manifest(path: impl AsRef<Path>, family: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let records: Vec<SourceRecord> = read_jsonl(path)?;
        let mut pool = Self::default();
        for r in records {
            if family.is_some() && r.family.as_deref() != family {
                continue;
            }
            let audio = read_wav(resolve(path, &r.audio))?;
            pool.push(PoolEntry {
                audio,
                language: r.language,
                speaker: r.speaker,
                family: r.family,
            })?;
        }
        Ok(pool)
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.by_language.values().flatten().next().map(|e| e.audio.sample_rate())
    }

    pub fn languages(&self) -> Vec<String> {
        self.by_language.keys().cloned().collect()
    }

    pub fn entries(&self, language: &str) -> &[PoolEntry] {
        self.by_language.get(language).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_language.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Split `total` samples into `n` parts close to uniform-random proportions, each at
/// least `min` samples.
fn split_lengths(rng: &mut ChaCha8Rng, total: usize, n: usize, min: usize) -> Vec<usize> {
    let spare = total - n * min;
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let sum: f64 = weights.iter().sum();
    let mut out: Vec<usize> = weights.iter().map(|w| min + (spare as f64 * w / sum).floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    out[n - 1] += total - assigned;
    out
}

/// Pick the segment counts (matrix, embedded) so every segment can respect `min` and,
/// where possible, `max`.
fn segment_counts(m_len: usize, e_len: usize, min: usize, max: usize) -> Result<(usize, usize)> {
    let n_e = e_len.div_ceil(max).max(1);
    if e_len < n_e * min {
        return Err(Error::invalid(format!(
            "embedded share of {e_len} samples cannot be split into segments of {min}..{max} samples"
        )));
    }
    let candidates = [n_e + 1, n_e, n_e - 1];
    let feasible = |n_m: usize| n_m >= 1 && m_len >= n_m * min;
    candidates
        .iter()
        .copied()
        .find(|&n_m| feasible(n_m) && m_len.div_ceil(n_m) <= max)
        .or_else(|| candidates.iter().copied().find(|&n_m| feasible(n_m)))
        .map(|n_m| (n_m, n_e))
        .ok_or_else(|| {
            Error::invalid(format!(
                "cannot lay out {m_len} matrix samples around {n_e} embedded segments with segments of at least {min} samples"
            ))
        })
}

/// Concatenate matrix and embedded segments into one code-switched utterance.
///
/// Segments alternate (embedded spans are never adjacent), sources are drawn without
/// replacement, and adjacent segments overlap by a linear crossfade whose midpoint is
/// the label boundary.
pub fn build_utterance(recipe: &SimulationRecipe, pool: &SourcePool, vc: &dyn VoiceConversion) -> Result<SimulatedUtterance> {
    recipe.validate()?;
    for lang in recipe.languages() {
        if pool.entries(&lang).is_empty() {
            return Err(Error::EmptyPool(lang));
        }
    }
    let sr = pool.sample_rate().ok_or_else(|| Error::EmptyPool(recipe.matrix_language.clone()))?;
    let srf = sr as f64;
    let total = (recipe.target_duration * srf).round() as usize;
    let e_len = (recipe.embedded_ratio * total as f64).round() as usize;
    let m_len = total - e_len;
    let min = (recipe.min_segment * srf).round() as usize;
    let max = (recipe.max_segment * srf).round() as usize;
    let fade = (recipe.crossfade * srf).round() as usize;
    let half = fade / 2;
    let fade = 2 * half;

    let mut rng = recipe_rng(recipe.seed, BUILD_STREAM);
    let (n_m, n_e) = segment_counts(m_len, e_len, min, max)?;
    let m_parts = split_lengths(&mut rng, m_len, n_m, min);
    let e_parts = split_lengths(&mut rng, e_len, n_e, min);

    // (language, is_matrix, label length)
    let mut plan: Vec<(String, bool, usize)> = Vec::with_capacity(n_m + n_e);
    let matrix_first = n_m >= n_e;
    let (mut mi, mut ei) = (0, 0);
    for i in 0..n_m + n_e {
        let take_matrix = if matrix_first { i % 2 == 0 } else { i % 2 == 1 };
        if take_matrix {
            plan.push((recipe.matrix_language.clone(), true, m_parts[mi]));
            mi += 1;
        } else {
            let lang = recipe.embedded_languages[rng.gen_range(0..recipe.embedded_languages.len())].clone();
            plan.push((lang, false, e_parts[ei]));
            ei += 1;
        }
    }

    let mut order: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for lang in recipe.languages() {
        let mut idx: Vec<usize> = (0..pool.entries(&lang).len()).collect();
        idx.shuffle(&mut rng);
        order.insert(lang, idx);
    }

    let last = plan.len() - 1;
    let mut crops: Vec<(WaveformBuffer, Provenance, bool)> = Vec::with_capacity(plan.len());
    let mut boundary = 0usize;
    for (i, (lang, is_matrix, len)) in plan.iter().enumerate() {
        let lead = if i > 0 { half } else { 0 };
        let tail = if i < last { half } else { 0 };
        let need = len + lead + tail;
        let queue = order.get_mut(lang).expect("language present");
        let pos = queue
            .iter()
            .position(|&k| pool.entries(lang)[k].audio.len() >= need)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "duration unreachable: no unused `{lang}` source of at least {:.3} s",
                    need as f64 / srf
                ))
            })?;
        let entry = &pool.entries(lang)[queue.remove(pos)];
        let offset = rng.gen_range(0..=entry.audio.len() - need);
        let crop = entry.audio.slice(offset, offset + need)?;
        let prov = Provenance {
            source_id: entry.audio.source_id().to_string(),
            speaker: entry.speaker.clone(),
            language: lang.clone(),
            source_start: (offset + lead) as f64 / srf,
            source_end: (offset + lead + len) as f64 / srf,
            start: boundary as f64 / srf,
            end: (boundary + len) as f64 / srf,
        };
        boundary += len;
        crops.push((crop, prov, *is_matrix));
    }

    let reference = crops
        .iter()
        .find(|c| c.2)
        .map(|c| c.0.clone())
        .expect("every plan holds a matrix segment");
    for c in crops.iter_mut().filter(|c| !c.2) {
        let converted = vc.convert(&c.0, &reference)?;
        if converted.len() != c.0.len() {
            return Err(Error::invalid(format!(
                "voice conversion changed segment length from {} to {}",
                c.0.len(),
                converted.len()
            )));
        }
        c.0 = converted;
    }

    let mut out = vec![0.0f32; total];
    let mut start = 0usize;
    for (i, (crop, _, _)) in crops.iter().enumerate() {
        let len = plan[i].2;
        let lead = if i > 0 { half } else { 0 };
        let tail = if i < last { half } else { 0 };
        let origin = start - lead;
        for (j, &s) in crop.samples().iter().enumerate() {
            let w = if i > 0 && j < fade {
                (j as f32 + 0.5) / fade as f32
            } else if i < last && j >= lead + len + tail - fade {
                let k = j - (lead + len + tail - fade);
                1.0 - (k as f32 + 0.5) / fade as f32
            } else {
                1.0
            };
            out[origin + j] += w * s;
        }
        start += len;
    }

    let segments: Vec<Segment> = crops
        .iter()
        .map(|(_, p, _)| Segment::new(p.start, p.end, p.language.clone()))
        .collect();
    let id = recipe.utterance_id();
    Ok(SimulatedUtterance {
        audio: WaveformBuffer::new(out, sr, id.clone())?,
        labels: SegmentAnnotation::new(id, segments)?,
        provenance: crops.into_iter().map(|c| c.1).collect(),
        augmented: false,
        applied_snr_db: None,
        rir_id: None,
        noise_id: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> SourcePool {
        let mut entries = Vec::new();
        for (li, lang) in ["aa", "bb"].iter().enumerate() {
            for k in 0..6 {
                let samples: Vec<f32> = (0..16000 * 6)
                    .map(|i| ((i as f32) * 0.01 * (li + 1) as f32 + k as f32).sin() * 0.1)
                    .collect();
                entries.push(PoolEntry {
                    audio: WaveformBuffer::new(samples, 16000, format!("{lang}{k}")).unwrap(),
                    language: lang.to_string(),
                    speaker: format!("spk{k}"),
                    family: None,
                });
            }
        }
        SourcePool::new(entries).unwrap()
    }

    #[test]
    fn ratio_and_tiling() {
        let r = SimulationRecipe::new("aa", &["bb"], 10.0, 0.3, 7);
        let u = build_utterance(&r, &pool(), &IdentityVc).unwrap();
        assert_eq!(u.audio.len(), 160000);
        let emb = u.embedded_duration("aa");
        assert!((2.7..=3.3).contains(&emb), "{emb}");
        let segs = &u.labels.segments;
        assert_eq!(segs[0].start, 0.0);
        assert_eq!(segs.last().unwrap().end, 10.0);
        for w in segs.windows(2) {
            assert_eq!(w[0].end, w[1].start);
            assert!(!(w[0].label == "bb" && w[1].label == "bb"));
        }
        let mut ids: Vec<&str> = u.provenance.iter().map(|p| p.source_id.as_str()).collect();
        ids.sort();
        let n = ids.len();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn rejects_missing_language_and_unreachable_duration() {
        let r = SimulationRecipe::new("aa", &["cc"], 10.0, 0.3, 0);
        assert!(matches!(build_utterance(&r, &pool(), &IdentityVc), Err(Error::EmptyPool(l)) if l == "cc"));
        let r = SimulationRecipe::new("aa", &["bb"], 200.0, 0.3, 0);
        assert!(build_utterance(&r, &pool(), &IdentityVc).is_err());
        let mut r = SimulationRecipe::new("aa", &["aa"], 10.0, 0.3, 0);
        assert!(r.validate().is_err());
        r.embedded_languages = vec!["bb".into()];
        r.embedded_ratio = 1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let r = SimulationRecipe::new("aa", &["bb"], 8.0, 0.4, 3);
        let a = build_utterance(&r, &pool(), &IdentityVc).unwrap();
        let b = build_utterance(&r, &pool(), &IdentityVc).unwrap();
        assert_eq!(a, b);
    }
}
