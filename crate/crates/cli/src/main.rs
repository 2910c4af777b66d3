use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use langdiar::harness::{
    ablation_matrix, decode_long, evaluate, load_model, split_indices, train, AblationAxes, Dataset, ExperimentConfig,
    SplitBy, Stage, TrainOptions,
};
use langdiar::io::{read_jsonl, read_rttm, read_wav, write_jsonl, write_rttm};
use langdiar::io::manifest::resolve;
use langdiar::metrics::format_row;
use langdiar::simulator::toy::{read_buffers, toy_noises, toy_rirs, toy_sources, write_buffers, write_pool, NoiseKind, ToySourceSpec};
use langdiar::simulator::{build_corpus, plan_recipes, CommandVc, CorpusPools, IdentityVc, PlanOptions, VoiceConversion};
use langdiar::{label_matrix_to_segments, score_corpus, LabelMapping, ScoringConfig, ScoringMode, SourcePool};

#[derive(Parser)]
#[command(name = "langdiar", version, about = "Language diarization of code-switched speech")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write procedural monolingual sources, impulse responses and noises.
    ToySources(ToySourcesArgs),
    /// Build a simulated code-switching corpus from monolingual pools.
    Simulate(SimulateArgs),
    /// Pretrain on simulated data.
    Train(TrainArgs),
    /// Fine-tune on target-domain data, from a pretrained checkpoint or from scratch.
    Adapt(AdaptArgs),
    /// Score a checkpoint on a labelled manifest in ideal and practical modes.
    Evaluate(EvaluateArgs),
    /// Write a language RTTM for one recording.
    Diarize(DiarizeArgs),
    /// Frame-rate and loss-design ablations.
    Ablate(AblateArgs),
    /// DER between reference and hypothesis RTTM files.
    Score(ScoreArgs),
    /// Seeded adaptation/evaluation split of a manifest.
    Split(SplitArgs),
}

#[derive(Args)]
struct ToySourcesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "xa,xb")]
    languages: Vec<String>,
    #[arg(long, default_value_t = 4)]
    speakers: usize,
    #[arg(long, default_value_t = 6)]
    utterances: usize,
    /// Seconds per source recording.
    #[arg(long, default_value_t = 6.0)]
    duration: f64,
    #[arg(long, default_value_t = 4)]
    rirs: usize,
    /// RT60 range in seconds, as `min,max`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.2, 0.6])]
    rt60: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "white,brown,hum,bursty")]
    noise_kinds: Vec<NoiseArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    White,
    Brown,
    Hum,
    Bursty,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::White => NoiseKind::White,
            NoiseArg::Brown => NoiseKind::Brown,
            NoiseArg::Hum => NoiseKind::Hum,
            NoiseArg::Bursty => NoiseKind::Bursty,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Source manifest (JSON lines with audio, language, speaker).
    #[arg(long)]
    sources: PathBuf,
    /// Directory of impulse-response WAVs.
    #[arg(long)]
    rirs: PathBuf,
    /// Directory of noise WAVs.
    #[arg(long)]
    noises: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    hours: f64,
    /// Language pairs as `matrix:embedded[+embedded..]`, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pairs: Vec<String>,
    /// Only use sources of this family.
    #[arg(long)]
    family: Option<String>,
    /// Experiment config whose `[simulator]` table sets the recipe options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// External voice converter: `program input.wav reference.wav output.wav`.
    #[arg(long)]
    vc_command: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config. Paths may be overridden by LANGDIAR_* variables and flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue an interrupted run from this checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many steps (the schedule still spans `max_steps`).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Pretrained checkpoint to start from.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Ignore any initial checkpoint and train from random weights.
    #[arg(long)]
    from_scratch: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the `[eval]` and `[metrics]` tables of the checkpoint's config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DiarizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    /// RTTM output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recording id written to the RTTM; defaults to the file stem.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8")]
    pooling: Vec<usize>,
    /// Skip the focal / focal Tversky grid.
    #[arg(long)]
    no_loss_grid: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ideal,
    Practical,
}

#[derive(Clone, Copy, ValueEnum)]
enum MappingArg {
    Literal,
    Optimal,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    hypothesis: PathBuf,
    #[arg(long, value_enum, default_value = "practical")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "literal")]
    mapping: MappingArg,
    #[arg(long, default_value_t = 0.0)]
    collar: f64,
    #[arg(long, default_value_t = 0.025)]
    frame_period: f64,
    /// Print the breakdown as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Recording,
    Duration,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Share assigned to adaptation.
    #[arg(long, default_value_t = 0.7)]
    ratio: f64,
    #[arg(long, value_enum, default_value = "recording")]
    by: SplitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ToySources(a) => toy(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => run_training(a.run, Stage::Pretrain, None, false),
        Command::Adapt(a) => run_training(a.run, Stage::Adapt, a.init, a.from_scratch),
        Command::Evaluate(a) => eval(a),
        Command::Diarize(a) => diarize(a),
        Command::Ablate(a) => ablate(a),
        Command::Score(a) => score(a),
        Command::Split(a) => split(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn toy(a: ToySourcesArgs) -> Result<()> {
    let pool = toy_sources(&ToySourceSpec {
        languages: a.languages,
        speakers: a.speakers,
        utterances_per_speaker: a.utterances,
        duration: a.duration,
        seed: a.seed,
    })?;
    let manifest = write_pool(&pool, &a.out.join("sources"))?;
    write_buffers(&toy_rirs(a.rirs, (a.rt60[0], a.rt60[1]), a.seed)?, &a.out.join("rirs"))?;
    let kinds: Vec<NoiseKind> = a.noise_kinds.into_iter().map(Into::into).collect();
    write_buffers(&toy_noises(&kinds, 2, 8.0, a.seed)?, &a.out.join("noises"))?;
    println!("{}", manifest.display());
    Ok(())
}

fn parse_pairs(specs: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    specs
        .iter()
        .map(|s| {
            let (m, e) = s.split_once(':').with_context(|| format!("pair `{s}` is not `matrix:embedded`"))?;
            let embedded: Vec<String> = e.split('+').filter(|x| !x.is_empty()).map(str::to_string).collect();
            if m.is_empty() || embedded.is_empty() {
                bail!("pair `{s}` needs a matrix and at least one embedded language");
            }
            Ok((m.to_string(), embedded))
        })
        .collect()
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let options = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?.simulator,
        None => PlanOptions::default(),
    };
    let pairs = parse_pairs(&a.pairs)?;
    let sources = SourcePool::from_manifest(&a.sources, a.family.as_deref())
        .with_context(|| format!("loading sources from {}", a.sources.display()))?;
    for (m, e) in &pairs {
        for lang in std::iter::once(m).chain(e) {
            if sources.entries(lang).is_empty() {
                bail!("no sources for language `{lang}`");
            }
        }
    }
    let rirs = read_buffers(&a.rirs)?;
    let noises = read_buffers(&a.noises)?;
    let vc: Box<dyn VoiceConversion> = match a.vc_command {
        Some(p) => Box::new(CommandVc::new(p, Vec::new())),
        None => Box::new(IdentityVc),
    };
    let recipes = plan_recipes(a.hours, &pairs, &options, a.seed)?;
    let pools = CorpusPools {
        sources: &sources,
        rirs: &rirs,
        noises: &noises,
        vc: vc.as_ref(),
    };
    let corpus = build_corpus(&recipes, &pools, &a.out)?;
    log::info!(
        "{} utterances, {:.2} h, {} augmented",
        corpus.entries.len(),
        corpus.total_duration / 3600.0,
        corpus.augmented
    );
    println!("{}", corpus.manifest.display());
    Ok(())
}

/// Config file, then LANGDIAR_* variables, then flags.
fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env();
    Ok(cfg)
}

fn apply_flags(cfg: &mut ExperimentConfig, run: &RunArgs) {
    for (flag, slot) in [
        (&run.train, &mut cfg.paths.train_manifest),
        (&run.eval, &mut cfg.paths.eval_manifest),
        (&run.out, &mut cfg.paths.output_dir),
    ] {
        if let Some(v) = flag {
            *slot = Some(v.clone());
        }
    }
}

fn required<'a>(slot: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    slot.as_ref().with_context(|| format!("no {what}: set it in the config, the environment, or by flag"))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run_training(run: RunArgs, stage: Stage, init: Option<PathBuf>, from_scratch: bool) -> Result<()> {
    let mut cfg = load_config(run.config.as_deref())?;
    apply_flags(&mut cfg, &run);
    cfg.stage = stage;
    if let Some(i) = init {
        cfg.paths.init_checkpoint = Some(i);
    }
    cfg.training.from_scratch |= from_scratch;
    let train_set = load_dataset(required(&cfg.paths.train_manifest, "training manifest")?)?;
    let out = required(&cfg.paths.output_dir, "output directory")?.clone();
    let options = TrainOptions {
        init: None,
        resume: run.resume.clone(),
        stop_after: run.stop_after,
    };
    let outcome = train(&cfg, &train_set, &out, &options)?;
    log::info!("{} steps, final checkpoint {}", outcome.steps, outcome.final_checkpoint.display());
    if let Some(eval_path) = &cfg.paths.eval_manifest {
        let eval_set = load_dataset(eval_path)?;
        let (model, _) = load_model(&outcome.final_checkpoint)?;
        let report = evaluate(&model, &eval_set, &cfg, Some(&out.join("eval")))?;
        print!("{}", report.table(&format!("{stage:?}").to_lowercase()));
    }
    println!("{}", outcome.final_checkpoint.display());
    Ok(())
}

fn eval(a: EvaluateArgs) -> Result<()> {
    let (model, state) = load_model(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut cfg = state.config;
    cfg.apply_env();
    if let Some(p) = &a.config {
        let over = ExperimentConfig::from_file(p)?;
        cfg.eval = over.eval;
        cfg.metrics = over.metrics;
    }
    if let Some(e) = a.eval {
        cfg.paths.eval_manifest = Some(e);
    }
    let data = load_dataset(required(&cfg.paths.eval_manifest, "evaluation manifest")?)?;
    let report = evaluate(&model, &data, &cfg, a.out.as_deref())?;
    for (id, e) in &report.failures {
        eprintln!("skipped {id}: {e}");
    }
    print!("{}", report.table("model"));
    Ok(())
}

fn diarize(a: DiarizeArgs) -> Result<()> {
    let (model, state) = load_model(&a.checkpoint)?;
    let wav = read_wav(&a.audio)?;
    let id = a
        .id
        .or_else(|| a.audio.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "recording".into());
    let hyp = decode_long(&model, &wav, &state.config.eval)?;
    let ann = label_matrix_to_segments(&hyp, &id, state.config.metrics.threshold, state.config.eval.min_segment)?;
    match a.out {
        Some(p) => write_rttm(&[ann], p)?,
        None => print!("{}", langdiar::io::format_rttm(&[ann])),
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = load_config(a.run.config.as_deref())?;
    apply_flags(&mut cfg, &a.run);
    let train_set = load_dataset(required(&cfg.paths.train_manifest, "training manifest")?)?;
    let eval_set = load_dataset(required(&cfg.paths.eval_manifest, "evaluation manifest")?)?;
    let out = required(&cfg.paths.output_dir, "output directory")?.clone();
    let axes = AblationAxes {
        pooling: a.pooling,
        loss_flags: !a.no_loss_grid,
    };
    ablation_matrix(&cfg, &axes, &train_set, &eval_set, &out)?;
    print!("{}", std::fs::read_to_string(out.join("ablation.txt"))?);
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let config = ScoringConfig {
        mode: match a.mode {
            ModeArg::Ideal => ScoringMode::Ideal,
            ModeArg::Practical => ScoringMode::Practical,
        },
        label_mapping: match a.mapping {
            MappingArg::Literal => LabelMapping::Literal,
            MappingArg::Optimal => LabelMapping::Optimal,
        },
        collar: a.collar,
        frame_period: a.frame_period,
        ..Default::default()
    };
    let reference = read_rttm(&a.reference)?;
    let hypothesis = read_rttm(&a.hypothesis)?;
    let mut pairs = Vec::new();
    for r in reference {
        let h = hypothesis
            .iter()
            .find(|h| h.recording_id == r.recording_id)
            .cloned()
            .unwrap_or_else(|| langdiar::SegmentAnnotation {
                recording_id: r.recording_id.clone(),
                segments: Vec::new(),
            });
        pairs.push((r, h));
    }
    let b = score_corpus(&pairs, &config)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&b)?);
    } else {
        println!("{}", format_row("hypothesis", None, &b));
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let mut records: Vec<serde_json::Value> = read_jsonl(&a.manifest)?;
    // rewrite relative paths so the new manifests work from any directory
    for r in &mut records {
        for key in ["audio", "rttm"] {
            if let Some(p) = r.get(key).and_then(|v| v.as_str()).map(PathBuf::from) {
                let abs = std::path::absolute(resolve(&a.manifest, &p))?;
                r[key] = serde_json::Value::String(abs.to_string_lossy().into_owned());
            }
        }
    }
    let durations: Vec<f64> = records.iter().map(|r| r["duration"].as_f64().unwrap_or(0.0)).collect();
    let by = match a.by {
        SplitArg::Recording => SplitBy::Recording,
        SplitArg::Duration => SplitBy::Duration,
    };
    let s = split_indices(&durations, a.ratio, by, a.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    std::fs::create_dir_all(&a.out)?;
    write_jsonl(&pick(&s.adapt), a.out.join("adapt.jsonl"))?;
    write_jsonl(&pick(&s.eval), a.out.join("eval.jsonl"))?;
    std::fs::write(a.out.join("split.json"), serde_json::to_string_pretty(&s)?)?;
    println!("adapt {} eval {}", s.adapt.len(), s.eval.len());
    Ok(())
}
