//! Stochastic augmentation: eight transforms, each applied with probability
//! one half, in a fixed pipeline order.
//!
//! A plan is a pure function of `(master_seed, item_index)`, so a whole
//! augmented dataset is reproducible regardless of scheduling.

mod transforms;

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use transforms::{
    apply_transform, ChannelSelector, TransformKind, TransformSpec, BLUR_SIGMA_MAX, BRIGHTNESS_DELTA,
    CONTRAST_RANGE, NOISE_SCALE_MAX, ROTATE_MAX_DEGREES, SCALE_RANGE, TRIM_MAX,
};

use crate::evalproto::{DatasetManifest, EvalError, ManifestEntry, Origin, SeedRecord};
use crate::imagecore::{load_image, resize, save_png, Image, ImageError, InterpMethod};
use crate::rng;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("channel {selected} selected on a {channels}-channel image")]
    ChannelMismatch { selected: u8, channels: u8 },
    #[error("transform parameters out of range: {0:?}")]
    ParamOutOfRange(TransformSpec),
    #[error("plan is not in canonical order or repeats a transform")]
    NonCanonicalPlan,
    #[error("manifest has no original images to augment")]
    NothingToAugment,
    #[error("cannot create output directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Manifest(#[from] EvalError),
}

/// Transforms drawn for one augmented item, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub transforms: Vec<TransformSpec>,
    pub seed_record: SeedRecord,
}

impl AugmentPlan {
    pub fn is_canonical(&self) -> bool {
        self.transforms
            .windows(2)
            .all(|w| w[0].kind() < w[1].kind())
    }

    pub fn kinds(&self) -> impl Iterator<Item = TransformKind> + '_ {
        self.transforms.iter().map(TransformSpec::kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Augmented variants generated per original.
    pub factor: u32,
    pub master_seed: u64,
    /// Resize every variant to this `(width, height)` after the pipeline.
    pub output_size: Option<(u32, u32)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            factor: 0,
            master_seed: 0,
            output_size: None,
        }
    }
}

fn draw_selector(rng: &mut rng::Rng) -> ChannelSelector {
    match rng.random_range(0..4u8) {
        0 => ChannelSelector::All,
        c => ChannelSelector::Single(c - 1),
    }
}

/// Draws the plan for one item. Every transform is included independently
/// with probability 1/2 and gets uniformly drawn parameters.
pub fn sample_plan(master_seed: u64, item_index: u64) -> AugmentPlan {
    let mut rng = rng::stream(master_seed, item_index);
    let mut transforms = Vec::new();
    for kind in TransformKind::ALL {
        if !rng.random_bool(0.5) {
            continue;
        }
        let t = match kind {
            TransformKind::FlipH => TransformSpec::FlipH,
            TransformKind::Trim => TransformSpec::Trim {
                left: rng.random_range(0.0..=TRIM_MAX),
                right: rng.random_range(0.0..=TRIM_MAX),
                top: rng.random_range(0.0..=TRIM_MAX),
                bottom: rng.random_range(0.0..=TRIM_MAX),
            },
            TransformKind::Blur => TransformSpec::Blur {
                sigma: rng.random_range(0.0..=BLUR_SIGMA_MAX),
            },
            TransformKind::Noise => TransformSpec::Noise {
                scale: rng.random_range(0.0..=NOISE_SCALE_MAX),
                seed: rng.random(),
            },
            TransformKind::Brightness => TransformSpec::Brightness {
                delta: if rng.random_bool(0.5) { BRIGHTNESS_DELTA } else { -BRIGHTNESS_DELTA },
                channel: draw_selector(&mut rng),
            },
            TransformKind::Contrast => TransformSpec::Contrast {
                factor: rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1),
                channel: draw_selector(&mut rng),
            },
            TransformKind::Rotate => TransformSpec::Rotate {
                degrees: rng.random_range(-ROTATE_MAX_DEGREES..=ROTATE_MAX_DEGREES),
            },
            TransformKind::Scale => TransformSpec::Scale {
                factor: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            },
        };
        transforms.push(t);
    }
    AugmentPlan {
        transforms,
        seed_record: SeedRecord {
            master_seed,
            item_index,
        },
    }
}

pub fn apply_plan(img: &Image, plan: &AugmentPlan) -> Result<Image, AugmentError> {
    if !plan.is_canonical() {
        return Err(AugmentError::NonCanonicalPlan);
    }
    let mut out = img.clone();
    for t in &plan.transforms {
        out = apply_transform(&out, t)?;
    }
    Ok(out)
}

/// Item index of variant `variant` of the `original`-th source image.
pub fn item_index(original: usize, variant: u32, factor: u32) -> u64 {
    original as u64 * factor as u64 + variant as u64
}

/// Renders one augmented variant. Gray sources are promoted to RGB so that
/// channel-selective color transforms apply.
pub fn augment_item(img: &Image, cfg: &AugmentConfig, item_index: u64) -> Result<Image, AugmentError> {
    let plan = sample_plan(cfg.master_seed, item_index);
    let out = apply_plan(&img.to_rgb(), &plan)?;
    match cfg.output_size {
        Some((w, h)) => Ok(resize(&out, w, h, InterpMethod::Bilinear)?),
        None => Ok(out),
    }
}

/// All variants of in-memory originals: `result[i][k]` is variant `k` of image `i`.
pub fn augment_images(originals: &[Image], cfg: &AugmentConfig) -> Result<Vec<Vec<Image>>, AugmentError> {
    originals
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            (0..cfg.factor)
                .map(|k| augment_item(img, cfg, item_index(i, k, cfg.factor)))
                .collect()
        })
        .collect()
}

fn variant_path(out_dir: &Path, entry: &ManifestEntry, original: usize, variant: u32) -> String {
    let stem = Path::new(&entry.path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "img".into());
    out_dir
        .join(&entry.subject)
        .join(format!("{stem}_{original:05}_aug{variant:03}.png"))
        .to_string_lossy()
        .into_owned()
}

/// The augmented manifest without rendering any pixels: originals first,
/// then `factor` variants per original in `(original, variant)` order.
pub fn plan_augmented_manifest(
    manifest: &DatasetManifest,
    cfg: &AugmentConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, AugmentError> {
    if cfg.factor == 0 {
        return Ok(manifest.clone());
    }
    let mut entries = manifest.entries.clone();
    for (i, e) in manifest.originals().enumerate() {
        for k in 0..cfg.factor {
            entries.push(ManifestEntry {
                path: variant_path(out_dir, e, i, k),
                subject: e.subject.clone(),
                origin: Origin::Augmented {
                    source: e.path.clone(),
                    seed_record: SeedRecord {
                        master_seed: cfg.master_seed,
                        item_index: item_index(i, k, cfg.factor),
                    },
                },
            });
        }
    }
    Ok(DatasetManifest::with_subjects(entries, manifest.subjects.clone())?)
}

/// Renders every variant of every original to PNG under `out_dir` and
/// returns the extended manifest. `factor == 0` returns the input unchanged.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    cfg: &AugmentConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, AugmentError> {
    let originals: Vec<&ManifestEntry> = manifest.originals().collect();
    if originals.is_empty() {
        return Err(AugmentError::NothingToAugment);
    }
    let out = plan_augmented_manifest(manifest, cfg, out_dir)?;
    if cfg.factor == 0 {
        return Ok(out);
    }
    for subject in &manifest.subjects {
        let dir = out_dir.join(subject);
        std::fs::create_dir_all(&dir).map_err(|source| AugmentError::Io { path: dir, source })?;
    }
    let generated = &out.entries[manifest.len()..];
    originals
        .par_iter()
        .enumerate()
        .try_for_each(|(i, entry)| -> Result<(), AugmentError> {
            let img = load_image(&entry.path)?;
            let first = i * cfg.factor as usize;
            for (k, target) in generated[first..first + cfg.factor as usize].iter().enumerate() {
                let variant = augment_item(&img, cfg, item_index(i, k as u32, cfg.factor))?;
                save_png(&variant, &target.path)?;
            }
            Ok(())
        })?;
    Ok(out)
}
