use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{io_err, ExperimentError};
use crate::evalproto::{DatasetManifest, ManifestEntry};
use crate::imagecore::load_image;

/// A file that was skipped because it could not be decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestWarning {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub manifest: DatasetManifest,
    pub warnings: Vec<IngestWarning>,
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if !is_hidden(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Lists `root/<subject>/<image>` into a manifest. Every file is decoded
/// once; files that fail are skipped and reported.
pub fn ingest(root: &Path) -> Result<IngestOutcome, ExperimentError> {
    let subjects: Vec<PathBuf> = sorted_children(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if subjects.len() < 2 {
        return Err(ExperimentError::NoSubjects {
            root: root.into(),
            found: subjects.len(),
        });
    }
    let mut files = Vec::new();
    for dir in &subjects {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for path in sorted_children(dir)?.into_iter().filter(|p| p.is_file()) {
            files.push((name.clone(), path));
        }
    }
    let decoded: Vec<Option<String>> = files
        .par_iter()
        .map(|(_, path)| load_image(path).err().map(|e| e.to_string()))
        .collect();

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for ((subject, path), failure) in files.into_iter().zip(decoded) {
        match failure {
            None => entries.push(ManifestEntry::original(path.to_string_lossy(), subject)),
            Some(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                warnings.push(IngestWarning { path, reason });
            }
        }
    }
    for dir in &subjects {
        let name = dir.file_name().unwrap_or_default().to_string_lossy();
        if !entries.iter().any(|e| e.subject == name) {
            return Err(ExperimentError::EmptySubject { subject: name.into_owned() });
        }
    }
    Ok(IngestOutcome {
        manifest: DatasetManifest::new(entries)?,
        warnings,
    })
}
