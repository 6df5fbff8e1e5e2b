//! Synthetic ear-like identity dataset.
//!
//! Each class is a random prototype (helix rim, antihelix groove, concha,
//! lobe, skin tone, a few moles); each image renders it under a random pose,
//! scale, shift, left/right flip, lighting change, blur and sensor noise.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use thiserror::Error;

use crate::evalproto::{DatasetManifest, EvalError, ManifestEntry};
use crate::imagecore::{self, clamp_u8, Image, ImageError};
use crate::rng;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Manifest(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub classes: usize,
    pub images_per_class: usize,
    /// Square side in pixels.
    pub size: u32,
    pub seed: u64,
    /// Strength of per-image variation; 1 is the default mix.
    pub nuisance: f64,
}

impl SurrogateConfig {
    pub fn new(classes: usize, images_per_class: usize, seed: u64) -> Self {
        SurrogateConfig {
            classes,
            images_per_class,
            size: 48,
            seed,
            nuisance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarPrototype {
    skin: [f64; 3],
    /// Helix ellipse semi-axes, tilt (radians) and rim thickness.
    axes: (f64, f64),
    tilt: f64,
    rim: f64,
    rim_gain: f64,
    /// Antihelix arc: radius fraction of the helix, angular span, darkness.
    arc_radius: f64,
    arc_span: (f64, f64),
    arc_depth: f64,
    concha: (f64, f64, f64, f64),
    lobe: (f64, f64, f64),
    moles: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Nuisance {
    background: [f64; 3],
    angle: f64,
    scale: f64,
    shift: (f64, f64),
    flip: bool,
    gain: f64,
    offset: f64,
    blur: bool,
    noise: f64,
    noise_seed: u64,
}

pub fn prototype(seed: u64, class: u64) -> EarPrototype {
    let mut r = rng::stream(seed, class);
    let mut u = |lo: f64, hi: f64| r.random_range(lo..hi);
    let tone = u(0.0, 1.0);
    let skin = [140.0 + 90.0 * tone, 100.0 + 80.0 * tone, 80.0 + 70.0 * tone];
    let a = u(0.22, 0.32);
    let b = u(0.33, 0.44);
    let start = u(-2.6, -0.6);
    let mut p = EarPrototype {
        skin,
        axes: (a, b),
        tilt: u(-0.35, 0.35),
        rim: u(0.035, 0.09),
        rim_gain: u(0.8, 1.3),
        arc_radius: u(0.45, 0.75),
        arc_span: (start, start + u(1.6, 3.2)),
        arc_depth: u(0.5, 0.85),
        concha: (u(-0.08, 0.06), u(-0.06, 0.1), u(0.06, 0.13), u(0.5, 0.8)),
        lobe: (u(-0.08, 0.08), u(0.22, 0.34), u(0.07, 0.14)),
        moles: Vec::new(),
    };
    let n = r.random_range(0..3);
    p.moles = (0..n)
        .map(|_| (r.random_range(-0.25..0.25), r.random_range(-0.35..0.35), r.random_range(0.015..0.035)))
        .collect();
    p
}

fn smooth(edge: f64, x: f64, width: f64) -> f64 {
    // 1 inside (x < edge), 0 outside, linear ramp of `width`.
    ((edge - x) / width + 0.5).clamp(0.0, 1.0)
}

impl EarPrototype {
    /// Shading at prototype coordinates (ear-centered, unit = image side).
    fn shade(&self, x: f64, y: f64, px: f64, background: &[f64; 3]) -> [f64; 3] {
        let (a, b) = self.axes;
        let (s, c) = self.tilt.sin_cos();
        let (xr, yr) = (c * x + s * y, -s * x + c * y);
        // Normalized elliptical radius, 1 on the helix outline.
        let rho = ((xr / a).powi(2) + (yr / b).powi(2)).sqrt();
        let lobe_d = ((x - self.lobe.0).powi(2) + (y - self.lobe.1).powi(2)).sqrt();
        let inside = smooth(1.0, rho, px / a).max(smooth(self.lobe.2, lobe_d, px));
        let mut k = 1.0;
        // Bright rim just inside the outline, dark fold beneath it.
        let rim_in = 1.0 - self.rim / a.min(b);
        let on_rim = smooth(1.0, rho, px / a) * (1.0 - smooth(rim_in, rho, px / a));
        k += 0.25 * self.rim_gain * on_rim;
        let fold = (-((rho - rim_in + 0.06) / 0.05).powi(2)).exp();
        k -= 0.3 * fold * inside;
        // Antihelix groove along an arc.
        let theta = yr.atan2(xr);
        let (t0, t1) = self.arc_span;
        if theta > t0 && theta < t1 {
            let g = (-((rho - self.arc_radius) / 0.05).powi(2)).exp();
            k -= 0.35 * self.arc_depth * g;
        }
        // Concha hollow.
        let (cx, cy, cr, depth) = self.concha;
        let dc = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        k -= depth * 0.6 * smooth(cr, dc, 2.0 * px) * inside;
        for &(mx, my, mr) in &self.moles {
            let dm = ((x - mx).powi(2) + (y - my).powi(2)).sqrt();
            k -= 0.5 * smooth(mr, dm, px) * inside;
        }
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = inside * self.skin[ch] * k + (1.0 - inside) * background[ch];
        }
        out
    }
}

fn draw_nuisance(r: &mut rng::Rng, strength: f64) -> Nuisance {
    let mut u = |lo: f64, hi: f64| r.random_range(lo..hi);
    let bg = u(20.0, 110.0);
    Nuisance {
        background: [bg + u(-15.0, 15.0), bg + u(-15.0, 15.0), bg + u(-15.0, 15.0)],
        angle: u(-22.0, 22.0).to_radians() * strength,
        scale: 1.0 + u(-0.15, 0.15) * strength,
        shift: (u(-0.07, 0.07) * strength, u(-0.07, 0.07) * strength),
        flip: u(0.0, 1.0) < 0.5 * strength.min(1.0),
        gain: 1.0 + u(-0.25, 0.25) * strength,
        offset: u(-25.0, 25.0) * strength,
        blur: u(0.0, 1.0) < 0.3 * strength.min(1.0),
        noise: u(2.0, 9.0) * strength,
        noise_seed: r.random(),
    }
}

fn render(p: &EarPrototype, n: &Nuisance, size: u32) -> Image {
    let s = size as f64;
    let px = 1.0 / s;
    let (sin, cos) = n.angle.sin_cos();
    let mut data = Vec::with_capacity((size * size * 3) as usize);
    for y in 0..size {
        for x in 0..size {
            // Image coordinates centered, then undo shift, rotation and scale.
            let u = (x as f64 + 0.5) / s - 0.5 - n.shift.0;
            let v = (y as f64 + 0.5) / s - 0.5 - n.shift.1;
            let (mut xp, yp) = ((cos * u + sin * v) / n.scale, (-sin * u + cos * v) / n.scale);
            if n.flip {
                xp = -xp;
            }
            for c in p.shade(xp, yp, px / n.scale, &n.background) {
                data.push(clamp_u8(c * n.gain + n.offset));
            }
        }
    }
    let mut img = Image::new(size, size, 3, data).expect("consistent buffer");
    if n.blur {
        img = crate::augment::apply_transform(&img, &crate::augment::TransformSpec::Blur { sigma: 0.8 })
            .expect("valid blur");
    }
    let normal = Normal::new(0.0, n.noise.max(1e-9)).expect("finite noise");
    let mut r = rng::rng_from_seed(n.noise_seed);
    let mut img_data = img.data().to_vec();
    for v in img_data.iter_mut() {
        *v = clamp_u8(*v as f64 + normal.sample(&mut r));
    }
    Image::new(size, size, 3, img_data).expect("consistent buffer")
}

/// `images_per_class` renders of each of `classes` prototypes, class-major.
pub fn generate(cfg: &SurrogateConfig) -> Vec<(Image, usize)> {
    let proto_seed = rng::derive_seed(cfg.seed, 0x5052);
    let view_seed = rng::derive_seed(cfg.seed, 0x5649);
    (0..cfg.classes * cfg.images_per_class)
        .into_par_iter()
        .map(|i| {
            let class = i / cfg.images_per_class;
            let p = prototype(proto_seed, class as u64);
            let mut r = rng::stream(view_seed, i as u64);
            let n = draw_nuisance(&mut r, cfg.nuisance);
            (render(&p, &n, cfg.size), class)
        })
        .collect()
}

pub fn subject_name(class: usize) -> String {
    format!("s{class:03}")
}

/// Writes the dataset as `root/<subject>/<nn>.png` and returns its manifest.
pub fn write_dataset(cfg: &SurrogateConfig, root: &Path) -> Result<DatasetManifest, SurrogateError> {
    let items = generate(cfg);
    let entries = items
        .par_iter()
        .enumerate()
        .map(|(i, (img, class))| {
            let path = root
                .join(subject_name(*class))
                .join(format!("{:03}.png", i % cfg.images_per_class));
            imagecore::save_png(img, &path)?;
            Ok(ManifestEntry::original(path.to_string_lossy().into_owned(), subject_name(*class)))
        })
        .collect::<Result<Vec<_>, SurrogateError>>()?;
    Ok(DatasetManifest::new(entries)?)
}
