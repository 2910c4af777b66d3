//! Shared fixtures for the integration tests: toy pools, tiny corpora, and the
//! desk-scale pretrain/adapt experiment.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use langdiar::harness::{evaluate, load_model, train, Dataset, ExperimentConfig, Stage, TrainOptions};
use langdiar::simulator::toy::{toy_noises, toy_rirs, toy_sources, NoiseKind, ToySourceSpec};
use langdiar::simulator::{build_corpus, plan_recipes, CorpusPools, IdentityVc, PlanOptions, SourcePool};
use langdiar::{DerBreakdown, ModelConfig, WaveformBuffer};

pub struct ToyPools {
    pub sources: SourcePool,
    pub rirs: Vec<WaveformBuffer>,
    pub noises: Vec<WaveformBuffer>,
}

pub fn toy_pools(seed: u64) -> ToyPools {
    ToyPools {
        sources: toy_sources(&ToySourceSpec {
            seed,
            ..Default::default()
        })
        .unwrap(),
        rirs: toy_rirs(3, (0.2, 0.5), seed).unwrap(),
        noises: toy_noises(&[NoiseKind::White, NoiseKind::Brown], 2, 4.0, seed).unwrap(),
    }
}

/// xa is always the matrix language, as in corpora with a dominant host language.
pub fn one_way() -> Vec<(String, Vec<String>)> {
    vec![("xa".to_string(), vec!["xb".to_string()])]
}

/// Both directions: either language can be the matrix.
pub fn pairs() -> Vec<(String, Vec<String>)> {
    vec![
        ("xa".to_string(), vec!["xb".to_string()]),
        ("xb".to_string(), vec!["xa".to_string()]),
    ]
}

fn simulate(pools: &ToyPools, pairs: &[(String, Vec<String>)], seconds: f64, options: &PlanOptions, seed: u64, dir: &Path) -> Dataset {
    let recipes = plan_recipes(seconds / 3600.0, pairs, options, seed).unwrap();
    let cp = CorpusPools {
        sources: &pools.sources,
        rirs: &pools.rirs,
        noises: &pools.noises,
        vc: &IdentityVc,
    };
    let manifest = build_corpus(&recipes, &cp, dir).unwrap();
    Dataset::load(&manifest.manifest).unwrap()
}

/// About 48 s of training audio and 16 s of evaluation audio, 6-8 s utterances.
pub fn tiny_corpus(dir: &Path, seed: u64) -> (Dataset, Dataset) {
    let pools = toy_pools(seed);
    let opts = PlanOptions {
        min_duration: 6.0,
        max_duration: 8.0,
        ..Default::default()
    };
    (
        simulate(&pools, &pairs(), 48.0, &opts, seed, &dir.join("train")),
        simulate(&pools, &pairs(), 16.0, &opts, seed + 1, &dir.join("eval")),
    )
}

/// Knobs of the desk-scale experiment. `LANGDIAR_E2E_DIR` keeps the artifacts.
#[derive(Debug, Clone)]
pub struct EndToEndScale {
    pub d_model: usize,
    pub pretrain_seconds: f64,
    pub pretrain_steps: usize,
    pub adapt_seconds: f64,
    pub eval_seconds: f64,
    pub adapt_steps: usize,
    pub overfit_steps: usize,
    pub batch_frames: usize,
    pub keep: Option<PathBuf>,
}

impl EndToEndScale {
    pub fn from_env() -> Self {
        let get = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
        Self {
            d_model: get("LANGDIAR_E2E_D", 32.0) as usize,
            pretrain_seconds: get("LANGDIAR_E2E_PRETRAIN_SECONDS", 600.0),
            pretrain_steps: get("LANGDIAR_E2E_PRETRAIN_STEPS", 200.0) as usize,
            adapt_seconds: get("LANGDIAR_E2E_ADAPT_SECONDS", 120.0),
            eval_seconds: get("LANGDIAR_E2E_EVAL_SECONDS", 120.0),
            adapt_steps: get("LANGDIAR_E2E_ADAPT_STEPS", 40.0) as usize,
            overfit_steps: get("LANGDIAR_E2E_OVERFIT_STEPS", 150.0) as usize,
            batch_frames: get("LANGDIAR_E2E_BATCH_FRAMES", 560.0) as usize,
            keep: std::env::var_os("LANGDIAR_E2E_DIR").map(PathBuf::from),
        }
    }
}

pub struct EndToEndOutcome {
    pub pretrained: DerBreakdown,
    pub scratch: DerBreakdown,
    pub overfit: DerBreakdown,
}

fn base_config(scale: &EndToEndScale, steps: usize, lr: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelConfig::desk(scale.d_model);
    cfg.training.max_steps = steps;
    cfg.training.max_frames_per_batch = scale.batch_frames;
    cfg.training.checkpoint_every = 0;
    cfg.optimizer.learning_rate = lr;
    cfg.optimizer.warmup_steps = (steps / 10).max(1);
    cfg
}

/// Pretrain on a clean-ish simulated corpus, adapt on a held-out domain with different
/// noise and reverberation (once from the pretrained weights, once from scratch), and
/// separately overfit a single batch.
pub fn end_to_end(scale: &EndToEndScale) -> EndToEndOutcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = scale.keep.clone().unwrap_or_else(|| tmp.path().to_path_buf());
    let opts = PlanOptions {
        min_duration: 8.0,
        max_duration: 12.0,
        ..Default::default()
    };

    let source_pool = toy_sources(&ToySourceSpec {
        speakers: 6,
        utterances_per_speaker: 12,
        duration: 8.0,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let pretrain_pools = ToyPools {
        sources: source_pool.clone(),
        rirs: toy_rirs(4, (0.15, 0.4), 21).unwrap(),
        noises: toy_noises(&[NoiseKind::White, NoiseKind::Brown], 2, 5.0, 31).unwrap(),
    };
    // the held-out domain: other noise types and longer rooms
    let domain_pools = ToyPools {
        sources: source_pool,
        rirs: toy_rirs(4, (0.6, 0.9), 22).unwrap(),
        noises: toy_noises(&[NoiseKind::Hum, NoiseKind::Bursty], 2, 5.0, 32).unwrap(),
    };
    let mut domain_opts = opts.clone();
    domain_opts.template.augment_probability = 0.9;

    let pairs = one_way();
    let pretrain_set = simulate(&pretrain_pools, &pairs, scale.pretrain_seconds, &opts, 1, &root.join("data/pretrain"));
    let adapt_set = simulate(&domain_pools, &pairs, scale.adapt_seconds, &domain_opts, 2, &root.join("data/adapt"));
    let eval_set = simulate(&domain_pools, &pairs, scale.eval_seconds, &domain_opts, 3, &root.join("data/eval"));

    let pre_cfg = base_config(scale, scale.pretrain_steps, 3e-3);
    let pre = train(&pre_cfg, &pretrain_set, &root.join("pretrain"), &TrainOptions::default()).unwrap();

    let mut adapt_cfg = base_config(scale, scale.adapt_steps, 1e-3);
    adapt_cfg.stage = Stage::Adapt;
    let adapted = train(
        &adapt_cfg,
        &adapt_set,
        &root.join("adapt-pretrained"),
        &TrainOptions {
            init: Some(pre.final_checkpoint.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let mut scratch_cfg = adapt_cfg.clone();
    scratch_cfg.training.from_scratch = true;
    let scratch = train(&scratch_cfg, &adapt_set, &root.join("adapt-scratch"), &TrainOptions::default()).unwrap();

    let score = |dir: &Path, cfg: &ExperimentConfig, data: &Dataset| {
        let (model, _) = load_model(dir).unwrap();
        evaluate(&model, data, cfg, Some(&dir.join("eval"))).unwrap().practical
    };
    let pretrained = score(&adapted.final_checkpoint, &adapt_cfg, &eval_set);
    let scratch = score(&scratch.final_checkpoint, &scratch_cfg, &eval_set);

    // one batch: a single utterance, trained until it is memorized
    let one = pretrain_set.subset(&[0]);
    let mut fit_cfg = base_config(scale, scale.overfit_steps, 3e-3);
    fit_cfg.optimizer.min_lr_ratio = 0.3;
    fit_cfg.optimizer.weight_decay = 0.0;
    let fit = train(&fit_cfg, &one, &root.join("overfit"), &TrainOptions::default()).unwrap();
    let overfit = score(&fit.final_checkpoint, &fit_cfg, &one);

    EndToEndOutcome {
        pretrained,
        scratch,
        overfit,
    }
}

/// Central finite differences against analytic gradients for `samples` randomly chosen
/// scalar parameters of `store`. Returns (within tolerance, checked, worst offender).
pub fn finite_difference_check(
    store: &langdiar::nn::ParamStore,
    loss: impl Fn() -> candle_core::Tensor,
    samples: usize,
    filter: impl Fn(&str) -> bool,
    seed: u64,
) -> (usize, usize, f64) {
    use candle_core::{Device, Tensor};
    use langdiar::nn::{scalar, to_vec};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let grads = loss().backward().unwrap();
    let mut slots: Vec<(String, candle_core::Var, usize)> = Vec::new();
    for (name, var) in store.iter().filter(|(n, _)| filter(n)) {
        for i in 0..var.elem_count() {
            slots.push((name.clone(), var.clone(), i));
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);
    slots.truncate(samples);
    let h = 1e-5;
    let (mut ok, mut worst) = (0, 0.0f64);
    for (name, var, idx) in &slots {
        let original = var.as_tensor().copy().unwrap();
        let base = to_vec(&original).unwrap();
        let analytic = grads.get(var.as_tensor()).map(|g| to_vec(g).unwrap()[*idx]).unwrap_or(0.0);
        let at = |delta: f64| {
            let mut v = base.clone();
            v[*idx] += delta;
            var.set(&Tensor::from_vec(v, original.shape(), &Device::Cpu).unwrap()).unwrap();
            scalar(&loss()).unwrap()
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        var.set(&original).unwrap();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel <= 1e-3 {
            ok += 1;
        } else {
            worst = worst.max(rel);
            eprintln!("{name}[{idx}]: analytic {analytic:.3e} numeric {numeric:.3e}");
        }
    }
    (ok, slots.len(), worst)
}
