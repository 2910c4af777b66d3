//! Two-stage training, evaluation, and ablation orchestration.

mod ablation;
mod checkpoint;
mod config;
mod data;
mod evaluate;
mod optim;
mod train;

pub use ablation::{ablation_matrix, loss_table, pooling_table, AblationAxes, AblationAxis, AblationRun, POOLING_WINDOWS};
pub use checkpoint::{
    load_model, load_params_into, read_state, save_checkpoint, CheckpointState, InitSource, OPTIMIZER_FILE, PARAMS_FILE,
    STATE_FILE,
};
pub use config::{
    EvalConfig, ExperimentConfig, OptimizerConfig, PathsConfig, Stage, TrainingConfig, ENV_EVAL_MANIFEST,
    ENV_INIT_CHECKPOINT, ENV_OUTPUT_DIR, ENV_TRAIN_MANIFEST,
};
pub use data::{
    batch_order_hash, crop_offset, epoch_order, make_batches, split_indices, Dataset, DatasetEntry, Split, SplitBy,
    Utterance,
};
pub use evaluate::{decode_long, evaluate, EvaluationReport, UtteranceScore, IDEAL_NOTE};
pub use optim::{learning_rate, AdamW, UpdateStats};
pub use train::{batch_loss, train, StepLog, TrainOptions, TrainOutcome, FINAL_DIR, LOG_FILE};
