use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Seed and item index an augmented variant was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub item_index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Original,
    Augmented { source: String, seed_record: SeedRecord },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub subject: String,
    pub origin: Origin,
}

impl ManifestEntry {
    pub fn original(path: impl Into<String>, subject: impl Into<String>) -> Self {
        ManifestEntry {
            path: path.into(),
            subject: subject.into(),
            origin: Origin::Original,
        }
    }

    pub fn is_original(&self) -> bool {
        matches!(self.origin, Origin::Original)
    }
}

/// Subject-labelled image listing.
///
/// `subjects` is the sorted set of labels; entry order is preserved as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub entries: Vec<ManifestEntry>,
    pub subjects: Vec<String>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, EvalError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(EvalError::DuplicatePath(e.path.clone()));
            }
        }
        let subjects: BTreeSet<&str> = entries.iter().map(|e| e.subject.as_str()).collect();
        let subjects = subjects.into_iter().map(str::to_owned).collect();
        Ok(DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            entries,
            subjects,
        })
    }

    /// Like [`DatasetManifest::new`] but keeps an explicit subject list, which
    /// may name subjects that have no entries here (e.g. a train-side manifest).
    pub fn with_subjects(entries: Vec<ManifestEntry>, subjects: Vec<String>) -> Result<Self, EvalError> {
        let mut m = DatasetManifest::new(entries)?;
        let mut subjects = subjects;
        subjects.sort();
        subjects.dedup();
        for s in &m.subjects {
            if subjects.binary_search(s).is_err() {
                return Err(EvalError::UnknownSubject(s.clone()));
            }
        }
        m.subjects = subjects;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn subject_index(&self, label: &str) -> Option<usize> {
        self.subjects.binary_search_by(|s| s.as_str().cmp(label)).ok()
    }

    pub fn originals(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.is_original())
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(EvalError::SchemaVersion(self.schema_version));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(EvalError::DuplicatePath(e.path.clone()));
            }
            if self.subject_index(&e.subject).is_none() {
                return Err(EvalError::UnknownSubject(e.subject.clone()));
            }
        }
        if self.subjects.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::UnsortedSubjects);
        }
        Ok(())
    }

    /// Entries grouped per subject, each group in manifest order.
    pub fn by_subject(&self) -> BTreeMap<&str, Vec<&ManifestEntry>> {
        let mut groups: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in &self.entries {
            groups.entry(e.subject.as_str()).or_default().push(e);
        }
        groups
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        super::write_file(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_json(&super::read_text(path.as_ref())?)
    }
}
