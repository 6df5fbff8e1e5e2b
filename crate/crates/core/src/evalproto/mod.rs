//! Closed-set identification protocol: per-subject splits, ranks, CMC,
//! Rank-1/Rank-5 and AUCMC, shared by the network and descriptor paths.

mod manifest;
mod metrics;
mod report;
mod split;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub use manifest::{DatasetManifest, ManifestEntry, Origin, SeedRecord, MANIFEST_SCHEMA_VERSION};
pub use metrics::{aucmc, cmc, ranks_from_scores, CmcCurve, ScoreMatrix};
pub use report::{Counts, ExperimentReport, ReportContext, REPORT_SCHEMA_VERSION};
pub use split::{split_dataset, train_count, Split, SPLIT_RULE};

use crate::imagecore::Image;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("split ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("augmented entry {0} cannot be split; splits take originals only")]
    AugmentedEntry(String),
    #[error("duplicate manifest path {0}")]
    DuplicatePath(String),
    #[error("subject {0} is not in the subject list")]
    UnknownSubject(String),
    #[error("subject list is not sorted and unique")]
    UnsortedSubjects,
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {subjects} subjects")]
    LabelOutOfRange { label: usize, subjects: usize },
    #[error("rank {rank} out of range for {subjects} subjects")]
    RankOutOfRange { rank: usize, subjects: usize },
    #[error("no ranks to accumulate")]
    EmptyRanks,
    #[error("probe {0} has a NaN score")]
    NanScore(usize),
    #[error("scorer covers {scorer} subjects but the split has {split}")]
    SubjectSetMismatch { scorer: usize, split: usize },
    #[error("scoring failed: {0}")]
    Scorer(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Anything that can rank the enrolled subjects for a probe image.
///
/// Scores are higher-is-better: class probabilities for a network,
/// negated distances for a descriptor gallery.
pub trait ProbeScorer: Sync {
    fn num_subjects(&self) -> usize;

    /// One score row per probe, each of length [`ProbeScorer::num_subjects`].
    fn score_batch(&self, probes: &[Image]) -> Result<Vec<Vec<f64>>, EvalError>;
}

/// Probe image with the index of its true subject.
#[derive(Debug, Clone)]
pub struct Probe {
    pub image: Image,
    pub label: usize,
}

/// Scores every probe and reduces to a report in probe order.
pub fn evaluate(
    scorer: &dyn ProbeScorer,
    probes: &[Probe],
    num_subjects: usize,
    batch_size: usize,
    ctx: &ReportContext,
) -> Result<ExperimentReport, EvalError> {
    if scorer.num_subjects() != num_subjects {
        return Err(EvalError::SubjectSetMismatch {
            scorer: scorer.num_subjects(),
            split: num_subjects,
        });
    }
    let batch_size = batch_size.max(1);
    let chunks: Vec<Vec<Vec<f64>>> = probes
        .par_chunks(batch_size)
        .map(|chunk| {
            let images: Vec<Image> = chunk.iter().map(|p| p.image.clone()).collect();
            scorer.score_batch(&images)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<f64>> = chunks.into_iter().flatten().collect();
    let scores = ScoreMatrix::from_rows(&rows)?;
    if scores.rows() > 0 && scores.cols() != num_subjects {
        return Err(EvalError::ShapeMismatch {
            expected: num_subjects,
            actual: scores.cols(),
        });
    }
    let labels: Vec<usize> = probes.iter().map(|p| p.label).collect();
    ExperimentReport::from_scores(&scores, true, &labels, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct OneHot;

    impl ProbeScorer for OneHot {
        fn num_subjects(&self) -> usize {
            3
        }

        fn score_batch(&self, probes: &[Image]) -> Result<Vec<Vec<f64>>, EvalError> {
            // The true label is smuggled in the first pixel.
            Ok(probes
                .iter()
                .map(|p| {
                    let mut row = vec![0.0; 3];
                    row[p.data()[0] as usize] = 1.0;
                    row
                })
                .collect())
        }
    }

    #[test]
    fn oracle_classifier_scores_perfectly() {
        let probes: Vec<Probe> = (0..7)
            .map(|i| Probe {
                image: Image::filled(2, 2, &[(i % 3) as u8]).unwrap(),
                label: i % 3,
            })
            .collect();
        let r = evaluate(&OneHot, &probes, 3, 2, &ReportContext::default()).unwrap();
        assert_eq!((r.rank1, r.rank5, r.aucmc), (100.0, 100.0, 100.0));
        assert_eq!(r.counts.test, 7);
        assert!(matches!(
            evaluate(&OneHot, &probes, 4, 2, &ReportContext::default()),
            Err(EvalError::SubjectSetMismatch { .. })
        ));
    }
}
