//! Procedural stand-ins for monolingual speech, noise, and impulse-response pools.
//!
//! Each toy "language" is a source-filter babble with its own vowel formants, consonant
//! noise band, and syllable rhythm. Speakers differ in pitch and are shared across
//! languages. Good enough to exercise the whole pipeline offline; not speech.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::SAMPLE_RATE;
use crate::io::{write_jsonl, write_wav, SourceRecord};
use crate::types::WaveformBuffer;

use super::{PoolEntry, SourcePool};

#[derive(Debug, Clone)]
struct ToyLanguage {
    vowels: Vec<(f64, f64)>,
    consonant_band: f64,
    syllable: (f64, f64),
    consonant_share: f64,
}

impl ToyLanguage {
    fn new(index: usize, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9 * (index as u64 + 1)));
        let spread = if count > 1 { index as f64 / (count - 1) as f64 } else { 0.5 };
        // each language keeps to its own corner of the vowel space
        let (f1, f2) = (300.0 + 350.0 * spread, 900.0 + 1100.0 * spread);
        let vowels = (0..4)
            .map(|_| (rng.gen_range(f1..f1 + 200.0), rng.gen_range(f2..f2 + 400.0)))
            .collect();
        let base = 0.12 + 0.1 * spread;
        Self {
            vowels,
            consonant_band: 1800.0 + 3500.0 * spread,
            syllable: (base, base + 0.08),
            consonant_share: 0.2 + 0.25 * spread,
        }
    }
}

/// Two-pole resonator with unit peak gain (approximately).
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, sr: f64) -> Self {
        let r = (-PI * bandwidth / sr).exp();
        let theta = 2.0 * PI * freq / sr;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn normalize_rms(x: &mut [f64], rms: f64) {
    let p = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if p > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / p);
    }
}

fn babble(lang: &ToyLanguage, f0: f64, samples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = Vec::with_capacity(samples);
    let mut phase = 0.0f64;
    while out.len() < samples {
        let syl = (rng.gen_range(lang.syllable.0..lang.syllable.1) * sr) as usize;
        let cons = (syl as f64 * lang.consonant_share) as usize;
        let (f1, f2) = lang.vowels[rng.gen_range(0..lang.vowels.len())];
        let pitch = f0 * rng.gen_range(0.9..1.1);
        let glide = rng.gen_range(-0.15..0.15);
        let mut band = Resonator::new(lang.consonant_band, 600.0, sr);
        let mut r1 = Resonator::new(f1, 80.0, sr);
        let mut r2 = Resonator::new(f2, 120.0, sr);
        for n in 0..syl {
            let pos = n as f64 / syl as f64;
            let env = (PI * pos).sin().powf(0.6);
            let v = if n < cons {
                band.step(rng.gen_range(-1.0..1.0)) * 2.0
            } else {
                phase += pitch * (1.0 + glide * pos) / sr;
                phase -= phase.floor();
                let src = 2.0 * phase - 1.0;
                r1.step(src) + 0.6 * r2.step(src)
            };
            out.push(env * v);
        }
    }
    out.truncate(samples);
    normalize_rms(&mut out, 0.1);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySourceSpec {
    pub languages: Vec<String>,
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    /// Seconds per source utterance.
    pub duration: f64,
    pub seed: u64,
}

impl Default for ToySourceSpec {
    fn default() -> Self {
        Self {
            languages: vec!["xa".into(), "xb".into()],
            speakers: 4,
            utterances_per_speaker: 6,
            duration: 6.0,
            seed: 0,
        }
    }
}

/// Monolingual pool of toy speech.
pub fn toy_sources(spec: &ToySourceSpec) -> Result<SourcePool> {
    if spec.languages.is_empty() || spec.speakers == 0 || spec.utterances_per_speaker == 0 {
        return Err(Error::invalid("toy pool needs languages, speakers, and utterances"));
    }
    if !(spec.duration > 0.0) {
        return Err(Error::invalid("toy source duration must be positive"));
    }
    let samples = (spec.duration * SAMPLE_RATE as f64).round() as usize;
    let mut entries = Vec::new();
    for (li, code) in spec.languages.iter().enumerate() {
        let lang = ToyLanguage::new(li, spec.languages.len(), spec.seed);
        for s in 0..spec.speakers {
            let f0 = 90.0 + 150.0 * (s as f64 + 0.5) / spec.speakers as f64;
            for u in 0..spec.utterances_per_speaker {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(((li * 1000 + s) * 1000 + u) as u64 + 1);
                let audio = babble(&lang, f0, samples, &mut rng);
                let id = format!("{code}-spk{s}-{u:03}");
                entries.push(PoolEntry {
                    audio: WaveformBuffer::new(audio.into_iter().map(|v| v as f32).collect(), SAMPLE_RATE, id)?,
                    language: code.clone(),
                    speaker: format!("spk{s}"),
                    family: None,
                });
            }
        }
    }
    SourcePool::new(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    /// One-pole low-passed noise.
    Brown,
    /// Mains hum with harmonics over a weak noise floor.
    Hum,
    /// Noise bursts with silent gaps.
    Bursty,
}

/// `count` noise recordings of each kind.
pub fn toy_noises(kinds: &[NoiseKind], count: usize, duration: f64, seed: u64) -> Result<Vec<WaveformBuffer>> {
    let sr = SAMPLE_RATE as f64;
    let n = (duration * sr).round() as usize;
    let mut out = Vec::new();
    for (ki, kind) in kinds.iter().enumerate() {
        for c in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((ki * 1000 + c) as u64 + 1);
            let mut x: Vec<f64> = match kind {
                NoiseKind::White => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                NoiseKind::Brown => {
                    let mut y = 0.0;
                    (0..n)
                        .map(|_| {
                            y = 0.98 * y + 0.02 * rng.gen_range(-1.0..1.0);
                            y
                        })
                        .collect()
                }
                NoiseKind::Hum => {
                    let base = rng.gen_range(48.0..62.0);
                    (0..n)
                        .map(|i| {
                            let t = i as f64 / sr;
                            (1..=4).map(|h| (2.0 * PI * base * h as f64 * t).sin() / h as f64).sum::<f64>()
                                + 0.05 * rng.gen_range(-1.0..1.0)
                        })
                        .collect()
                }
                NoiseKind::Bursty => {
                    let mut on = false;
                    let mut left = 0usize;
                    (0..n)
                        .map(|_| {
                            if left == 0 {
                                on = !on;
                                left = rng.gen_range(800..8000);
                            }
                            left -= 1;
                            if on {
                                rng.gen_range(-1.0..1.0)
                            } else {
                                0.01 * rng.gen_range(-1.0..1.0)
                            }
                        })
                        .collect()
                }
            };
            normalize_rms(&mut x, 0.1);
            let id = format!("noise-{kind:?}-{c}").to_lowercase();
            out.push(WaveformBuffer::new(x.into_iter().map(|v| v as f32).collect(), SAMPLE_RATE, id)?);
        }
    }
    Ok(out)
}

/// Exponentially decaying noise tails after a direct-path impulse, RT60 in `rt60`.
pub fn toy_rirs(count: usize, rt60: (f64, f64), seed: u64) -> Result<Vec<WaveformBuffer>> {
    if !(rt60.0 > 0.0 && rt60.1 >= rt60.0) {
        return Err(Error::invalid("RT60 range must satisfy 0 < low <= high"));
    }
    let sr = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let t60 = if rt60.1 > rt60.0 { rng.gen_range(rt60.0..rt60.1) } else { rt60.0 };
        let len = ((t60 * sr) as usize).max(2);
        let gap = rng.gen_range(16..160).min(len - 1);
        let mut h = vec![0.0f32; len];
        h[0] = 1.0;
        for (n, v) in h.iter_mut().enumerate().skip(gap) {
            let decay = (-6.9 * n as f64 / (t60 * sr)).exp();
            *v = (0.4 * decay * rng.gen_range(-1.0..1.0)) as f32;
        }
        out.push(WaveformBuffer::new(h, SAMPLE_RATE, format!("rir-{c}-{:.0}ms", t60 * 1000.0))?);
    }
    Ok(out)
}

/// Write a pool as WAV files plus a `sources.jsonl` manifest; returns the manifest path.
pub fn write_pool(pool: &SourcePool, dir: &Path) -> Result<PathBuf> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut records = Vec::new();
    for lang in pool.languages() {
        for e in pool.entries(&lang) {
            let rel = PathBuf::from("wav").join(format!("{}.wav", e.audio.source_id()));
            write_wav(&e.audio, dir.join(&rel))?;
            records.push(SourceRecord {
                audio: rel,
                language: lang.clone(),
                duration: e.audio.duration(),
                speaker: e.speaker.clone(),
                family: e.family.clone(),
            });
        }
    }
    let manifest = dir.join("sources.jsonl");
    write_jsonl(&records, &manifest)?;
    Ok(manifest)
}

/// Write buffers as `<dir>/<source_id>.wav`.
pub fn write_buffers(buffers: &[WaveformBuffer], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for b in buffers {
        write_wav(b, dir.join(format!("{}.wav", b.source_id())))?;
    }
    Ok(())
}

/// Read every `.wav` in a directory, sorted by file name.
pub fn read_buffers(dir: &Path) -> Result<Vec<WaveformBuffer>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    paths.sort();
    paths.iter().map(crate::io::read_wav).collect()
}
