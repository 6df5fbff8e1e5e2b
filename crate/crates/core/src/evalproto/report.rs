use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{aucmc, cmc, ranks_from_scores, CmcCurve, ScoreMatrix};
use super::EvalError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
    pub subjects: usize,
}

/// Scalar metrics, the full CMC curve and what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub run_id: String,
    pub rank1: f64,
    pub rank5: f64,
    pub aucmc: f64,
    pub curve: CmcCurve,
    pub config_digest: String,
    pub split_digest: String,
    pub split_rule: String,
    pub iterations: Option<u64>,
    pub counts: Counts,
}

/// Provenance fields copied verbatim into a report.
#[derive(Debug, Clone, Default)]
pub struct ReportContext {
    pub run_id: String,
    pub config_digest: String,
    pub split_digest: String,
    pub split_rule: String,
    pub iterations: Option<u64>,
    pub train_count: usize,
}

impl ExperimentReport {
    pub fn from_scores(
        scores: &ScoreMatrix,
        higher_is_better: bool,
        true_labels: &[usize],
        ctx: &ReportContext,
    ) -> Result<Self, EvalError> {
        let ranks = ranks_from_scores(scores, higher_is_better, true_labels)?;
        let curve = cmc(&ranks, scores.cols())?;
        Ok(ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            run_id: ctx.run_id.clone(),
            rank1: curve.rank(1),
            rank5: curve.rank(5),
            aucmc: aucmc(&curve),
            curve,
            config_digest: ctx.config_digest.clone(),
            split_digest: ctx.split_digest.clone(),
            split_rule: ctx.split_rule.clone(),
            iterations: ctx.iterations,
            counts: Counts {
                train: ctx.train_count,
                test: ranks.len(),
                subjects: scores.cols(),
            },
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: ExperimentReport = serde_json::from_str(text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(EvalError::SchemaVersion(r.schema_version));
        }
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        super::write_file(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_json(&super::read_text(path.as_ref())?)
    }
}
