//! End-to-end runs: ingest, split, augment, train or extract, evaluate, and
//! the three comparison series built from them.

mod config;
mod ingest;
mod pipeline;
mod plot;
mod series;

use std::path::PathBuf;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::descriptors::DescriptorError;
use crate::evalproto::EvalError;
use crate::imagecore::ImageError;
use crate::nn::NnError;

pub use config::{AugmentationSetup, ExperimentSeries, Pretrained, RunConfig, SplitSetup, CONFIG_SCHEMA_VERSION};
pub use ingest::{ingest, IngestOutcome, IngestWarning};
pub use pipeline::{
    evaluate_stage, extract_stage, load_labelled, prepare, pretrain_proxy, run, run_with_split, train_stage, write_artifacts,
    FeatureRecord, Prepared, RunOutcome, TrainRecord,
};
pub use plot::{plot_cmc, plot_cmc_files, render_cmc};
pub use series::{rows_to_csv, run_series, selective_policy, series_configs, SeriesOutcome, SeriesRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Split,
    Augment,
    Pretrain,
    Train,
    Extract,
    Evaluate,
    Write,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Augment => "augment",
            Stage::Pretrain => "pretrain",
            Stage::Train => "train",
            Stage::Extract => "extract",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{root}: found {found} subject directories, need at least 2")]
    NoSubjects { root: PathBuf, found: usize },
    #[error("subject {subject} has no decodable images")]
    EmptySubject { subject: String },
    #[error("train record does not match this run: {0}")]
    RecordMismatch(String),
    #[error("series runs used different splits")]
    SplitDrift,
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            ExperimentError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ExperimentError {
    let path = path.into();
    move |source| ExperimentError::Io { path, source }
}

pub(crate) fn tag<T, E: Into<ExperimentError>>(stage: Stage, r: Result<T, E>) -> Result<T, ExperimentError> {
    r.map_err(|e| ExperimentError::Stage {
        stage,
        source: Box::new(e.into()),
    })
}
