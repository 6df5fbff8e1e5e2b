use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{DatasetManifest, ManifestEntry, MANIFEST_SCHEMA_VERSION};
use super::EvalError;
use crate::rng;

/// Name of the per-subject rounding rule, recorded with every split and report.
pub const SPLIT_RULE: &str = "per_subject_round_half_up_clamped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub schema_version: u32,
    pub seed: u64,
    pub ratio: f64,
    pub rule: String,
    pub subjects: Vec<String>,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    /// Subjects with a single image; it went to train and they have no probe.
    pub singleton_subjects: Vec<String>,
}

/// Train count for a subject with `n` images: `round_half_up(ratio * n)`,
/// clamped to `[1, n - 1]` so both sides are populated.
pub fn train_count(n: usize, ratio: f64) -> usize {
    match n {
        0 => 0,
        1 => 1,
        _ => {
            // The epsilon keeps exact halves from rounding down through
            // representation error (e.g. 0.6 * 7.5).
            let t = (ratio * n as f64 + 0.5 + 1e-9).floor() as usize;
            t.clamp(1, n - 1)
        }
    }
}

/// Per-subject random split of an originals-only manifest.
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<Split, EvalError> {
    if manifest.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    if let Some(e) = manifest.entries.iter().find(|e| !e.is_original()) {
        return Err(EvalError::AugmentedEntry(e.path.clone()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut singleton_subjects = Vec::new();
    let groups = manifest.by_subject();
    let split_seed = rng::derive_seed(seed, rng::purpose::SPLIT);
    for (ordinal, (subject, entries)) in groups.iter().enumerate() {
        let n = entries.len();
        if n == 1 {
            singleton_subjects.push(subject.to_string());
        }
        let t = train_count(n, ratio);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(split_seed, ordinal as u64));
        let mut chosen = vec![false; n];
        for &i in &order[..t] {
            chosen[i] = true;
        }
        for (e, &in_train) in entries.iter().zip(&chosen) {
            if in_train {
                train.push((*e).clone());
            } else {
                test.push((*e).clone());
            }
        }
    }
    Ok(Split {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        ratio,
        rule: SPLIT_RULE.to_string(),
        subjects: manifest.subjects.clone(),
        train,
        test,
        singleton_subjects,
    })
}

impl Split {
    pub fn train_manifest(&self) -> Result<DatasetManifest, EvalError> {
        DatasetManifest::with_subjects(self.train.clone(), self.subjects.clone())
    }

    pub fn test_manifest(&self) -> Result<DatasetManifest, EvalError> {
        DatasetManifest::with_subjects(self.test.clone(), self.subjects.clone())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let s: Split = serde_json::from_str(text)?;
        if s.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(EvalError::SchemaVersion(s.schema_version));
        }
        Ok(s)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        super::write_file(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_json(&super::read_text(path.as_ref())?)
    }
}
