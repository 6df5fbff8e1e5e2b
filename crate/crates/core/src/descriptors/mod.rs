//! LBP and HOG descriptor baselines with nearest-neighbor identification.

mod hog;
mod lbp;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hog::{hog_descriptor, orientation_bins, HogParams};
pub use lbp::{lbp_code, lbp_descriptor, transitions, uniform_bin_table, LBP_BINS};

use crate::evalproto::{EvalError, ProbeScorer};
use crate::imagecore::{resize, Image, ImageError, InterpMethod};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("image {width}x{height} too small for the descriptor grid")]
    TooSmall { width: u32, height: u32 },
    #[error("descriptor needs a grayscale image, got {0} channels")]
    NotGrayscale(u8),
    #[error("invalid descriptor parameters: {0}")]
    InvalidParams(String),
    #[error("feature layouts differ")]
    LayoutMismatch,
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("feature file {path}: {reason}")]
    BadFeatureFile { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorId {
    Lbp = 0,
    Hog = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Chi2,
    Cosine,
    Euclidean,
}

impl DescriptorId {
    pub fn name(self) -> &'static str {
        match self {
            DescriptorId::Lbp => "lbp",
            DescriptorId::Hog => "hog",
        }
    }

    pub fn default_metric(self) -> Metric {
        match self {
            DescriptorId::Lbp => Metric::Chi2,
            DescriptorId::Hog => Metric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub descriptor: DescriptorId,
    /// `(rows, cols, bins)`
    pub layout: (u32, u32, u32),
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(descriptor: DescriptorId, layout: (u32, u32, u32), values: Vec<f32>) -> Result<Self, DescriptorError> {
        let len = layout.0 as usize * layout.1 as usize * layout.2 as usize;
        if values.len() != len {
            return Err(DescriptorError::InvalidParams(format!(
                "layout {layout:?} needs {len} values, got {}",
                values.len()
            )));
        }
        Ok(FeatureVector {
            descriptor,
            layout,
            values,
        })
    }

    fn compatible(&self, other: &FeatureVector) -> bool {
        self.descriptor == other.descriptor && self.layout == other.layout
    }
}

impl std::fmt::Display for DescriptorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DescriptorId {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lbp" => Ok(DescriptorId::Lbp),
            "hog" => Ok(DescriptorId::Hog),
            _ => Err(DescriptorError::InvalidParams(format!("unknown descriptor {s}"))),
        }
    }
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Chi2 => "chi2",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Metric::Chi2, Metric::Cosine, Metric::Euclidean]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DescriptorError::InvalidParams(format!("unknown metric {s}")))
    }
}

const CHI2_EPS: f64 = 1e-10;

pub fn feature_distance(a: &FeatureVector, b: &FeatureVector, metric: Metric) -> Result<f64, DescriptorError> {
    if !a.compatible(b) {
        return Err(DescriptorError::LayoutMismatch);
    }
    let pairs = a.values.iter().zip(&b.values).map(|(&x, &y)| (x as f64, y as f64));
    let d = match metric {
        Metric::Chi2 => pairs.map(|(x, y)| (x - y) * (x - y) / (x + y + CHI2_EPS)).sum(),
        Metric::Euclidean => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (x, y) in pairs {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
            }
        }
    };
    Ok(d)
}

/// Enrolled feature vectors with subject indices.
#[derive(Debug, Clone)]
pub struct Gallery {
    entries: Vec<(FeatureVector, usize)>,
}

impl Gallery {
    pub fn new(entries: Vec<(FeatureVector, usize)>) -> Result<Self, DescriptorError> {
        let Some((first, _)) = entries.first() else {
            return Err(DescriptorError::EmptyGallery);
        };
        if entries.iter().any(|(f, _)| !f.compatible(first)) {
            return Err(DescriptorError::LayoutMismatch);
        }
        Ok(Gallery { entries })
    }

    pub fn entries(&self) -> &[(FeatureVector, usize)] {
        &self.entries
    }

    /// Minimum distance from the probe to each subject's entries, indexed by
    /// subject; subjects absent from the gallery get `+inf`.
    pub fn subject_distances(
        &self,
        probe: &FeatureVector,
        metric: Metric,
        num_subjects: usize,
    ) -> Result<Vec<f64>, DescriptorError> {
        let mut best = vec![f64::INFINITY; num_subjects];
        for (f, s) in &self.entries {
            let d = feature_distance(f, probe, metric)?;
            if *s < num_subjects && d < best[*s] {
                best[*s] = d;
            }
        }
        Ok(best)
    }
}

/// Ranks gallery subjects by their closest entry; ties go to the lower label.
pub fn nn_identify(gallery: &Gallery, probe: &FeatureVector, metric: Metric) -> Result<Vec<(usize, f64)>, DescriptorError> {
    let mut best: std::collections::BTreeMap<usize, f64> = Default::default();
    for (f, s) in &gallery.entries {
        let d = feature_distance(f, probe, metric)?;
        best.entry(*s).and_modify(|b| *b = b.min(d)).or_insert(d);
    }
    let mut ranked: Vec<(usize, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    pub descriptor: DescriptorId,
    pub metric: Metric,
    /// Grayscale working size images are resized to before extraction.
    pub working_size: (u32, u32),
    pub lbp_grid: (u32, u32),
    pub hog: HogParams,
}

impl DescriptorConfig {
    pub fn new(descriptor: DescriptorId) -> Self {
        DescriptorConfig {
            descriptor,
            metric: descriptor.default_metric(),
            working_size: (100, 100),
            lbp_grid: (4, 4),
            hog: HogParams::default(),
        }
    }

    pub fn extract(&self, img: &Image) -> Result<FeatureVector, DescriptorError> {
        let gray = img.to_grayscale();
        let (w, h) = self.working_size;
        let gray = resize(&gray, w, h, InterpMethod::Bilinear)?;
        match self.descriptor {
            DescriptorId::Lbp => lbp_descriptor(&gray, self.lbp_grid.0, self.lbp_grid.1),
            DescriptorId::Hog => hog_descriptor(&gray, self.hog),
        }
    }
}

/// A gallery paired with its extraction settings, usable as a probe scorer.
pub struct GalleryScorer {
    pub gallery: Gallery,
    pub config: DescriptorConfig,
    pub num_subjects: usize,
}

impl ProbeScorer for GalleryScorer {
    fn num_subjects(&self) -> usize {
        self.num_subjects
    }

    fn score_batch(&self, probes: &[Image]) -> Result<Vec<Vec<f64>>, EvalError> {
        probes
            .iter()
            .map(|img| {
                let f = self.config.extract(img).map_err(|e| EvalError::Scorer(e.to_string()))?;
                let d = self
                    .gallery
                    .subject_distances(&f, self.config.metric, self.num_subjects)
                    .map_err(|e| EvalError::Scorer(e.to_string()))?;
                Ok(d.into_iter().map(|v| -v).collect())
            })
            .collect()
    }
}

const EBFV_MAGIC: &[u8; 4] = b"EBFV";
const EBFV_VERSION: u16 = 1;

/// `"EBFV"`, version u16, descriptor id u8, layout u32×3, then f32 values; all little-endian.
pub fn encode_features(f: &FeatureVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(19 + 4 * f.values.len());
    out.extend_from_slice(EBFV_MAGIC);
    out.extend_from_slice(&EBFV_VERSION.to_le_bytes());
    out.push(f.descriptor as u8);
    for d in [f.layout.0, f.layout.1, f.layout.2] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &f.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureVector, DescriptorError> {
    let bad = |reason: &str| DescriptorError::BadFeatureFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 19 || &bytes[..4] != EBFV_MAGIC {
        return Err(bad("bad magic or truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EBFV_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let descriptor = match bytes[6] {
        0 => DescriptorId::Lbp,
        1 => DescriptorId::Hog,
        other => return Err(bad(&format!("unknown descriptor id {other}"))),
    };
    let dim = |i: usize| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap());
    let layout = (dim(0), dim(1), dim(2));
    let len = layout.0 as usize * layout.1 as usize * layout.2 as usize;
    let payload = &bytes[19..];
    if payload.len() != len * 4 {
        return Err(bad("payload length does not match layout"));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureVector::new(descriptor, layout, values)
}

pub fn save_features(f: &FeatureVector, path: impl AsRef<Path>) -> Result<(), DescriptorError> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(f)).map_err(|source| DescriptorError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureVector, DescriptorError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DescriptorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_features(&bytes, path)
}
