//! Corpus building: recipe planning, per-recipe simulation, and on-disk layout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_jsonl, write_rttm, write_wav};
use crate::types::WaveformBuffer;

use super::{augment, build_utterance, Provenance, SimulationRecipe, SourcePool, VoiceConversion};

/// Everything a corpus build draws from.
pub struct CorpusPools<'a> {
    pub sources: &'a SourcePool,
    pub rirs: &'a [WaveformBuffer],
    pub noises: &'a [WaveformBuffer],
    pub vc: &'a dyn VoiceConversion,
}

/// One line of the corpus manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub audio: PathBuf,
    pub rttm: PathBuf,
    pub duration: f64,
    pub matrix_language: String,
    pub embedded_languages: Vec<String>,
    pub augmented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
    pub seed: u64,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub manifest: PathBuf,
    pub entries: Vec<CorpusEntry>,
    pub total_duration: f64,
    /// Utterance count per "matrix-embedded" pair.
    pub pair_counts: BTreeMap<String, usize>,
    pub augmented: usize,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const SUMMARY_NAME: &str = "summary.json";

/// Simulate every recipe and write `wav/<id>.wav`, `rttm/<id>.rttm`, `manifest.jsonl`
/// and `summary.json` under `output_dir`. Recipes are independent, so they run in parallel;
/// the manifest keeps recipe order.
pub fn build_corpus(recipes: &[SimulationRecipe], pools: &CorpusPools<'_>, output_dir: &Path) -> Result<CorpusManifest> {
    if recipes.is_empty() {
        return Err(Error::invalid("no recipes to simulate"));
    }
    for dir in [output_dir.join("wav"), output_dir.join("rttm")] {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let entries: Vec<CorpusEntry> = recipes
        .par_iter()
        .enumerate()
        .map(|(index, recipe)| {
            build_one(recipe, pools, output_dir).map_err(|e| Error::Recipe {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut pair_counts = BTreeMap::new();
    for r in recipes {
        *pair_counts.entry(r.pair_key()).or_insert(0) += 1;
    }
    let manifest = output_dir.join(MANIFEST_NAME);
    write_jsonl(&entries, &manifest)?;
    let out = CorpusManifest {
        manifest,
        total_duration: entries.iter().map(|e| e.duration).sum(),
        augmented: entries.iter().filter(|e| e.augmented).count(),
        entries,
        pair_counts,
    };
    let summary = serde_json::json!({
        "utterances": out.entries.len(),
        "total_duration": out.total_duration,
        "total_hours": out.total_duration / 3600.0,
        "augmented": out.augmented,
        "pair_counts": out.pair_counts,
    });
    let path = output_dir.join(SUMMARY_NAME);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

fn build_one(recipe: &SimulationRecipe, pools: &CorpusPools<'_>, output_dir: &Path) -> Result<CorpusEntry> {
    let clean = build_utterance(recipe, pools.sources, pools.vc)?;
    let utt = augment(&clean, pools.rirs, pools.noises, recipe)?;
    let id = recipe.utterance_id();
    let audio = PathBuf::from("wav").join(format!("{id}.wav"));
    let rttm = PathBuf::from("rttm").join(format!("{id}.rttm"));
    write_wav(&utt.audio, output_dir.join(&audio))?;
    write_rttm(std::slice::from_ref(&utt.labels), output_dir.join(&rttm))?;
    Ok(CorpusEntry {
        id,
        audio,
        rttm,
        duration: utt.audio.duration(),
        matrix_language: recipe.matrix_language.clone(),
        embedded_languages: recipe.embedded_languages.clone(),
        augmented: utt.augmented,
        snr_db: utt.applied_snr_db,
        rir: utt.rir_id,
        noise: utt.noise_id,
        seed: recipe.seed,
        provenance: utt.provenance,
    })
}

/// How [`plan_recipes`] spreads a duration budget over language pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanOptions {
    /// Utterance durations are drawn uniformly from this range (seconds).
    pub min_duration: f64,
    pub max_duration: f64,
    /// Embedded ratios are drawn uniformly from this range.
    pub min_embedded_ratio: f64,
    pub max_embedded_ratio: f64,
    /// Template for the remaining recipe fields.
    pub template: SimulationRecipe,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            min_duration: 8.0,
            max_duration: 16.0,
            min_embedded_ratio: 0.2,
            max_embedded_ratio: 0.45,
            template: SimulationRecipe::default(),
        }
    }
}

/// Recipes totalling `hours`, cycling through `pairs` in order so the per-pair
/// histogram is balanced. Recipe seeds are derived from `seed`.
pub fn plan_recipes(hours: f64, pairs: &[(String, Vec<String>)], options: &PlanOptions, seed: u64) -> Result<Vec<SimulationRecipe>> {
    if pairs.is_empty() {
        return Err(Error::invalid("no language pairs to plan"));
    }
    if !(hours > 0.0) {
        return Err(Error::invalid("requested duration must be positive"));
    }
    if !(options.min_duration > 0.0 && options.max_duration >= options.min_duration) {
        return Err(Error::invalid("utterance duration bounds must satisfy 0 < min <= max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = hours * 3600.0;
    let mut durations = Vec::new();
    let mut used = 0.0;
    while budget - used > options.max_duration {
        let d = rng.gen_range(options.min_duration..=options.max_duration);
        durations.push(d);
        used += d;
    }
    let rest = budget - used;
    if rest >= options.min_duration || durations.is_empty() {
        durations.push(rest);
    } else {
        // spread a short remainder over the recipes already planned
        let n = durations.len() as f64;
        durations.iter_mut().for_each(|d| *d += rest / n);
    }
    let mut out = Vec::with_capacity(durations.len());
    for (i, d) in durations.into_iter().enumerate() {
        let (matrix, embedded) = &pairs[i % pairs.len()];
        let ratio = if options.max_embedded_ratio > options.min_embedded_ratio {
            rng.gen_range(options.min_embedded_ratio..options.max_embedded_ratio)
        } else {
            options.min_embedded_ratio
        };
        let recipe = SimulationRecipe {
            matrix_language: matrix.clone(),
            embedded_languages: embedded.clone(),
            target_duration: d,
            embedded_ratio: ratio,
            seed: rng.gen(),
            ..options.template.clone()
        };
        recipe.validate().map_err(|e| Error::Recipe {
            index: i,
            source: Box::new(e),
        })?;
        out.push(recipe);
    }
    Ok(out)
}
