//! Training loops, evaluation, checkpoints, metrics logs and image output.

mod checkpoint;
mod config;
mod eval;
mod gradcheck;
mod image;
mod metrics;
mod model;
mod prepare;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{
    apply_override, preset, resolve_config, resolve_value, DatasetConfig, DatasetKind, ModelKind, TrainConfig,
    PRESET_NAMES,
};
pub use eval::{evaluate_bce, evaluate_mse, CopyLast, Predictor};
pub use gradcheck::{gradcheck_target, GradCheckEntry, GRADCHECK_TARGETS, GRADCHECK_TOLERANCE};
pub use image::{emit_image_grid, render_image_grid};
pub use metrics::{MetricRow, MetricsLog, DIVERGED, METRICS_HEADER};
pub use model::{new_optimizers, Model};
pub use prepare::{derive_seed, gaussian_blobs, PreparedData, MNIST_FILES};
pub use train::{
    epoch_checkpoint_name, resume, train, write_config_echo, EpochReport, Trainer, CONFIG_ECHO, LATEST_CHECKPOINT,
    METRICS_FILE,
};
