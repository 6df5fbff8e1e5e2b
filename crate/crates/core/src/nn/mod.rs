//! A small CNN engine: layers, backpropagation, SGD, architecture presets
//! and per-layer freeze masks for selective learning.

mod checkpoint;
mod data;
mod gradcheck;
mod layers;
mod model;
mod optim;
mod presets;
mod spec;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::imagecore::ImageError;

pub use checkpoint::{build_model, load_checkpoint, restore_matching, save_checkpoint, Checkpoint, Init};
pub use data::{preprocess, ImageSource, NetworkScorer, PathSource, SampleSource};
pub use gradcheck::{grad_check, grad_check_in, random_batch, relative_error, GradCheckOptions, GradCheckResult};
pub use model::{ForwardCache, ForwardOutput, InitReport, Model, Params};
pub use optim::FreezePolicy;
pub use presets::{mini_alexnet, mini_squeezenet, mini_vgg, Arch, PresetOptions};
pub use spec::{ArchSpec, LayerKind, LayerSpec, ParamShape, Shape3};
pub use train::{checkpoint_path, loss_and_grads, train, BatchPlan, LossRecord, Schedule, TrainingLog};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape inference failed at layer {layer}: {reason}")]
    ShapeInference { layer: String, reason: String },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("forward cache is stale: parameters changed since it was recorded")]
    StaleCache,
    #[error("backward needs a forward pass run with labels")]
    MissingLabels,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: String },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("parameter {0} belongs to a frozen layer")]
    FrozenParameter(String),
    #[error("unknown layer {0}")]
    UnknownLayer(String),
    #[error("unknown architecture {0}")]
    UnknownArch(String),
    #[error("unknown freeze policy {0}")]
    UnknownPolicy(String),
    #[error("policy {policy} does not apply to {arch}")]
    PolicyMismatch { policy: FreezePolicy, arch: String },
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
