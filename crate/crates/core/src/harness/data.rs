//! Labelled utterance sets, cropping, batching, and the adaptation/evaluation split.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::resolve;
use crate::io::{read_jsonl, read_rttm, read_wav};
use crate::types::{LanguageInventory, Segment, SegmentAnnotation, WaveformBuffer, VAD_LABEL};

/// One line of a train/eval manifest. Corpus manifests written by the simulator are
/// valid dataset manifests; extra fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub audio: PathBuf,
    pub rttm: PathBuf,
    #[serde(default)]
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_language: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub audio: WaveformBuffer,
    pub labels: SegmentAnnotation,
    pub matrix_language: Option<String>,
}

impl Utterance {
    /// Languages present in the labels; anything other than the matrix language is embedded.
    pub fn inventory(&self) -> Result<LanguageInventory> {
        let langs = self.labels.languages();
        let embedded = langs
            .iter()
            .map(|l| self.matrix_language.as_ref().is_some_and(|m| m != l))
            .collect();
        LanguageInventory::new(langs, embedded)
    }

    /// `[start, end)` in samples, labels shifted and clipped to match.
    pub fn crop(&self, start: usize, end: usize) -> Result<Utterance> {
        let sr = self.audio.sample_rate() as f64;
        let (t0, t1) = (start as f64 / sr, end as f64 / sr);
        let segments = self
            .labels
            .segments
            .iter()
            .filter(|s| s.end > t0 && s.start < t1)
            .map(|s| Segment::new(s.start.max(t0) - t0, s.end.min(t1) - t0, s.label.clone()))
            .filter(|s| s.end > s.start)
            .collect();
        Ok(Utterance {
            id: self.id.clone(),
            audio: self.audio.slice(start, end)?,
            labels: SegmentAnnotation::new(self.labels.recording_id.clone(), segments)?,
            matrix_language: self.matrix_language.clone(),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let entries: Vec<DatasetEntry> = read_jsonl(manifest)?;
        let mut utterances = Vec::with_capacity(entries.len());
        for e in entries {
            let utt = load_entry(manifest, &e).map_err(|err| Error::Utterance {
                id: e.id.clone(),
                source: Box::new(err),
            })?;
            utterances.push(utt);
        }
        Ok(Self { utterances })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.utterances.iter().map(|u| u.audio.duration()).sum()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
        }
    }
}

fn load_entry(manifest: &Path, e: &DatasetEntry) -> Result<Utterance> {
    let audio = read_wav(resolve(manifest, &e.audio))?;
    let anns = read_rttm(resolve(manifest, &e.rttm))?;
    let labels = match anns.iter().find(|a| a.recording_id == e.id) {
        Some(a) => a.clone(),
        None if anns.len() == 1 => anns[0].clone(),
        None => {
            return Err(Error::invalid(format!(
                "RTTM holds {} recordings and none is named `{}`",
                anns.len(),
                e.id
            )))
        }
    };
    if labels.end_time() > audio.duration() + 1e-3 {
        return Err(Error::invalid(format!(
            "labels end at {:.3} s but the audio lasts {:.3} s",
            labels.end_time(),
            audio.duration()
        )));
    }
    if labels.segments.iter().all(|s| s.label == VAD_LABEL) {
        return Err(Error::invalid("labels carry no language"));
    }
    Ok(Utterance {
        id: e.id.clone(),
        audio,
        labels,
        matrix_language: e.matrix_language.clone(),
    })
}

/// Epoch order: a seeded shuffle of utterance indices.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Greedy batching of `order` under a frame budget; an utterance larger than the
/// budget forms its own batch.
pub fn make_batches(order: &[usize], frames: &[usize], max_frames: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &i in order {
        if !current.is_empty() && used + frames[i] > max_frames {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += frames[i];
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Crop offset for utterance `index` in `epoch`; zero when no crop is needed.
pub fn crop_offset(len: usize, max_len: usize, seed: u64, epoch: usize, index: usize) -> usize {
    if len <= max_len {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c409);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng.gen_range(0..=len - max_len)
}

/// Order-sensitive hash of a batch sequence given utterance ids.
pub fn batch_order_hash<'a>(batches: impl IntoIterator<Item = &'a [String]>) -> u64 {
    let mut h = DefaultHasher::new();
    for b in batches {
        b.hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitBy {
    /// `ratio` of the recordings, by count.
    Recording,
    /// Recordings until `ratio` of the total duration is reached.
    Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub by: SplitBy,
    pub ratio: f64,
    pub seed: u64,
    pub adapt: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Seeded adaptation/evaluation split of recordings with the given durations.
pub fn split_indices(durations: &[f64], ratio: f64, by: SplitBy, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    if durations.len() < 2 {
        return Err(Error::invalid("need at least two recordings to split"));
    }
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = match by {
        SplitBy::Recording => ((ratio * durations.len() as f64).round() as usize).clamp(1, durations.len() - 1),
        SplitBy::Duration => {
            let total: f64 = durations.iter().sum();
            let mut acc = 0.0;
            let mut cut = 0;
            while cut < order.len() && acc < ratio * total {
                acc += durations[order[cut]];
                cut += 1;
            }
            cut.clamp(1, durations.len() - 1)
        }
    };
    let mut adapt = order[..cut].to_vec();
    let mut eval = order[cut..].to_vec();
    adapt.sort_unstable();
    eval.sort_unstable();
    Ok(Split {
        by,
        ratio,
        seed,
        adapt,
        eval,
    })
}
