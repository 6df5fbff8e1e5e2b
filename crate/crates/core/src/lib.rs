//! Ear identification under limited training data.
//!
//! Seeded image augmentation, a small CNN engine with full and selective
//! learning, LBP/HOG descriptor baselines and a closed-set identification
//! protocol with CMC metrics.

pub mod augment;
pub mod descriptors;
pub mod evalproto;
pub mod experiment;
pub mod imagecore;
pub mod nn;
pub mod rng;
pub mod surrogate;
pub mod tensor;

use std::path::Path;

/// Writes a file, creating missing parent directories.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
