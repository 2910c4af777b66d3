mod common;

use std::path::Path;

use langdiar::harness::{
    evaluate, load_model, read_state, train, Dataset, ExperimentConfig, InitSource, Stage, StepLog, TrainOptions,
    ENV_INIT_CHECKPOINT, ENV_TRAIN_MANIFEST, LOG_FILE, OPTIMIZER_FILE, PARAMS_FILE,
};
use langdiar::nn::to_vec;
use langdiar::ModelConfig;

fn config(steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model = ModelConfig::desk(16);
    cfg.training.max_steps = steps;
    cfg.training.max_frames_per_batch = 800;
    cfg.training.max_duration = 6.0;
    cfg.training.checkpoint_every = 0;
    cfg.optimizer.warmup_steps = 2;
    cfg.eval.window = 8.0;
    cfg.eval.hop = 4.0;
    cfg
}

fn params(dir: &Path) -> Vec<(String, Vec<f64>)> {
    let (model, _) = load_model(dir).unwrap();
    let mut out: Vec<(String, Vec<f64>)> =
        model.store().iter().map(|(k, v)| (k.clone(), to_vec(v.as_tensor()).unwrap())).collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn loss_falls_when_overfitting_one_utterance() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_set, _) = common::tiny_corpus(tmp.path(), 1);
    let one = train_set.subset(&[0]);
    let mut cfg = config(40);
    cfg.optimizer.learning_rate = 3e-3;
    cfg.optimizer.weight_decay = 0.0;
    let out = train(&cfg, &one, &tmp.path().join("run"), &TrainOptions::default()).unwrap();
    let mean = |s: &[StepLog]| s.iter().map(|l| l.loss).sum::<f64>() / s.len() as f64;
    let (head, tail) = (mean(&out.log[..5]), mean(&out.log[35..]));
    assert!(tail < 0.8 * head, "loss {head:.3} -> {tail:.3}");
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_set, _) = common::tiny_corpus(tmp.path(), 2);
    let mut cfg = config(6);
    cfg.training.checkpoint_every = 3;
    let full = train(&cfg, &train_set, &tmp.path().join("full"), &TrainOptions::default()).unwrap();

    let stopped = TrainOptions {
        stop_after: Some(3),
        ..Default::default()
    };
    let first = train(&cfg, &train_set, &tmp.path().join("part"), &stopped).unwrap();
    assert_eq!(first.steps, 3);
    let resume = TrainOptions {
        resume: Some(tmp.path().join("part/checkpoints/step-000003")),
        ..Default::default()
    };
    let rest = train(&cfg, &train_set, &tmp.path().join("part"), &resume).unwrap();
    assert_eq!(rest.steps, 6);
    assert_eq!(rest.batch_order_hash, full.batch_order_hash);
    for (a, b) in full.log[3..].iter().zip(&rest.log) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.utterances, b.utterances);
        assert!((a.loss - b.loss).abs() < 1e-5, "step {}: {} vs {}", a.step, a.loss, b.loss);
    }
    for ((name, a), (_, b)) in params(&full.final_checkpoint).iter().zip(params(&rest.final_checkpoint).iter()) {
        let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-5, "{name}: {worst:e}");
    }
    // the appended log holds every step exactly once
    let text = std::fs::read_to_string(tmp.path().join("part").join(LOG_FILE)).unwrap();
    let steps: Vec<usize> = text.lines().map(|l| serde_json::from_str::<StepLog>(l).unwrap().step).collect();
    assert_eq!(steps, (1..=6).collect::<Vec<_>>());
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_set, _) = common::tiny_corpus(tmp.path(), 3);
    let cfg = config(3);
    let a = train(&cfg, &train_set, &tmp.path().join("a"), &TrainOptions::default()).unwrap();
    let b = train(&cfg, &train_set, &tmp.path().join("b"), &TrainOptions::default()).unwrap();
    for file in [PARAMS_FILE, OPTIMIZER_FILE] {
        let x = std::fs::read(a.final_checkpoint.join(file)).unwrap();
        let y = std::fs::read(b.final_checkpoint.join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    assert_eq!(a.log, b.log);
    let logged: Vec<StepLog> = std::fs::read_to_string(tmp.path().join("a").join(LOG_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(logged, a.log);
}

#[test]
fn empty_sets_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_set, _) = common::tiny_corpus(tmp.path(), 4);
    let cfg = config(1);
    assert!(train(&cfg, &Dataset::default(), &tmp.path().join("x"), &TrainOptions::default()).is_err());
    let out = train(&cfg, &train_set, &tmp.path().join("run"), &TrainOptions::default()).unwrap();
    let (model, _) = load_model(&out.final_checkpoint).unwrap();
    assert!(evaluate(&model, &Dataset::default(), &cfg, None).is_err());
}

#[test]
fn adaptation_records_where_it_started() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_set, _) = common::tiny_corpus(tmp.path(), 5);
    let pre = train(&config(1), &train_set, &tmp.path().join("pre"), &TrainOptions::default()).unwrap();

    let mut adapt = config(1);
    adapt.stage = Stage::Adapt;
    assert!(train(&adapt, &train_set, &tmp.path().join("none"), &TrainOptions::default()).is_err());

    let with_init = TrainOptions {
        init: Some(pre.final_checkpoint.clone()),
        ..Default::default()
    };
    let a = train(&adapt, &train_set, &tmp.path().join("adapt"), &with_init).unwrap();
    let state = read_state(&a.final_checkpoint).unwrap();
    assert_eq!(state.stage, Stage::Adapt);
    assert_eq!(
        state.init,
        InitSource::Pretrained {
            checkpoint: pre.final_checkpoint.clone()
        }
    );

    adapt.training.from_scratch = true;
    let s = train(&adapt, &train_set, &tmp.path().join("scratch"), &with_init).unwrap();
    assert_eq!(read_state(&s.final_checkpoint).unwrap().init, InitSource::Scratch);

    let mut bad = config(1);
    bad.model = ModelConfig::desk(8);
    bad.stage = Stage::Adapt;
    assert!(train(&bad, &train_set, &tmp.path().join("bad"), &with_init).is_err());
}

#[test]
fn a_checkpoint_alone_reproduces_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_set, eval_set) = common::tiny_corpus(tmp.path(), 6);
    let cfg = config(2);
    let out = train(&cfg, &train_set, &tmp.path().join("run"), &TrainOptions::default()).unwrap();
    let (model, state) = load_model(&out.final_checkpoint).unwrap();
    assert_eq!(state.config, cfg);
    assert_eq!(state.step, 2);
    let direct = evaluate(&model, &eval_set, &cfg, Some(&tmp.path().join("eval-a"))).unwrap();
    let (again, snapshot) = load_model(&out.final_checkpoint).unwrap();
    let replay = evaluate(&again, &eval_set, &snapshot.config, Some(&tmp.path().join("eval-b"))).unwrap();
    assert_eq!(direct, replay);
    let a = std::fs::read(tmp.path().join("eval-a/report.json")).unwrap();
    let b = std::fs::read(tmp.path().join("eval-b/report.json")).unwrap();
    assert!(a == b);
    assert_eq!(direct.utterances.len() + direct.failures.len(), eval_set.len());
}

#[test]
fn config_file_with_environment_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("exp.toml");
    std::fs::write(
        &path,
        "stage = \"adapt\"\n[training]\nmax_steps = 12\n[paths]\ntrain_manifest = \"a.jsonl\"\ninit_checkpoint = \"pre\"\n",
    )
    .unwrap();
    let mut cfg = ExperimentConfig::from_file(&path).unwrap();
    assert_eq!(cfg.training.max_steps, 12);
    cfg.apply_env_from(|k| (k == ENV_TRAIN_MANIFEST).then(|| "b.jsonl".into()));
    assert_eq!(cfg.paths.train_manifest.as_deref(), Some(Path::new("b.jsonl")));
    assert_eq!(cfg.paths.init_checkpoint.as_deref(), Some(Path::new("pre")));
    cfg.apply_env_from(|k| (k == ENV_INIT_CHECKPOINT).then(|| "other".into()));
    assert_eq!(cfg.paths.init_checkpoint.as_deref(), Some(Path::new("other")));

    std::fs::write(&path, "[optimizer]\nlearning_rate = -1.0\n").unwrap();
    assert!(ExperimentConfig::from_file(&path).is_err());
}
