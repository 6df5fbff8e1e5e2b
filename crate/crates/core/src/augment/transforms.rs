//! The eight pixel-level transforms. Each is a pure function of image and parameters.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::imagecore::{clamp_u8, resize, Image, InterpMethod};
use crate::rng;

pub const TRIM_MAX: f64 = 0.10;
pub const BLUR_SIGMA_MAX: f64 = 3.0;
pub const NOISE_SCALE_MAX: f64 = 0.2;
pub const BRIGHTNESS_DELTA: i32 = 10;
pub const CONTRAST_RANGE: (f64, f64) = (0.5, 1.5);
pub const ROTATE_MAX_DEGREES: f64 = 45.0;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSelector {
    All,
    Single(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    FlipH,
    Trim,
    Blur,
    Noise,
    Brightness,
    Contrast,
    Rotate,
    Scale,
}

impl TransformKind {
    /// Canonical pipeline order.
    pub const ALL: [TransformKind; 8] = [
        TransformKind::FlipH,
        TransformKind::Trim,
        TransformKind::Blur,
        TransformKind::Noise,
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::Rotate,
        TransformKind::Scale,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    FlipH,
    /// Fractions cut from each side, then resized back to the original size.
    Trim { left: f64, right: f64, top: f64, bottom: f64 },
    Blur { sigma: f64 },
    /// Additive Gaussian noise with std `scale * 255`; `seed` drives the samples.
    Noise { scale: f64, seed: u64 },
    Brightness { delta: i32, channel: ChannelSelector },
    Contrast { factor: f64, channel: ChannelSelector },
    Rotate { degrees: f64 },
    Scale { factor: f64 },
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformSpec::FlipH => TransformKind::FlipH,
            TransformSpec::Trim { .. } => TransformKind::Trim,
            TransformSpec::Blur { .. } => TransformKind::Blur,
            TransformSpec::Noise { .. } => TransformKind::Noise,
            TransformSpec::Brightness { .. } => TransformKind::Brightness,
            TransformSpec::Contrast { .. } => TransformKind::Contrast,
            TransformSpec::Rotate { .. } => TransformKind::Rotate,
            TransformSpec::Scale { .. } => TransformKind::Scale,
        }
    }

    /// Checks parameters against their closed ranges.
    pub fn validate(&self) -> Result<(), AugmentError> {
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        let ok = match *self {
            TransformSpec::FlipH => true,
            TransformSpec::Trim { left, right, top, bottom } => {
                [left, right, top, bottom].iter().all(|&f| in_range(f, 0.0, TRIM_MAX))
            }
            TransformSpec::Blur { sigma } => in_range(sigma, 0.0, BLUR_SIGMA_MAX),
            TransformSpec::Noise { scale, .. } => in_range(scale, 0.0, NOISE_SCALE_MAX),
            TransformSpec::Brightness { delta, channel } => {
                delta.abs() == BRIGHTNESS_DELTA && valid_selector(channel)
            }
            TransformSpec::Contrast { factor, channel } => {
                in_range(factor, CONTRAST_RANGE.0, CONTRAST_RANGE.1) && valid_selector(channel)
            }
            TransformSpec::Rotate { degrees } => in_range(degrees, -ROTATE_MAX_DEGREES, ROTATE_MAX_DEGREES),
            TransformSpec::Scale { factor } => in_range(factor, SCALE_RANGE.0, SCALE_RANGE.1),
        };
        if ok {
            Ok(())
        } else {
            Err(AugmentError::ParamOutOfRange(*self))
        }
    }
}

fn valid_selector(c: ChannelSelector) -> bool {
    matches!(c, ChannelSelector::All | ChannelSelector::Single(0..=2))
}

pub fn apply_transform(img: &Image, t: &TransformSpec) -> Result<Image, AugmentError> {
    t.validate()?;
    match *t {
        TransformSpec::FlipH => Ok(flip_h(img)),
        TransformSpec::Trim { left, right, top, bottom } => trim(img, left, right, top, bottom),
        TransformSpec::Blur { sigma } => Ok(gaussian_blur(img, sigma)),
        TransformSpec::Noise { scale, seed } => Ok(gaussian_noise(img, scale, seed)),
        TransformSpec::Brightness { delta, channel } => {
            map_channels(img, channel, |v| (v as i32 + delta).clamp(0, 255) as u8)
        }
        TransformSpec::Contrast { factor, channel } => {
            map_channels(img, channel, |v| clamp_u8(128.0 + factor * (v as f64 - 128.0)))
        }
        TransformSpec::Rotate { degrees } => Ok(rotate(img, degrees)),
        TransformSpec::Scale { factor } => Ok(scale(img, factor)),
    }
}

pub(crate) fn flip_h(img: &Image) -> Image {
    let (w, ch) = (img.width() as usize, img.channels() as usize);
    let mut data = Vec::with_capacity(img.data().len());
    for row in img.data().chunks_exact(w * ch) {
        for px in row.chunks_exact(ch).rev() {
            data.extend_from_slice(px);
        }
    }
    Image::new(img.width(), img.height(), img.channels(), data).expect("same geometry")
}

/// Pixel bounds kept by a trim: `[start, end)` along an axis of `len` pixels.
pub(crate) fn trim_bounds(len: u32, lead: f64, trail: f64) -> (u32, u32) {
    let start = (lead * len as f64).round() as u32;
    let end = len - (trail * len as f64).round() as u32;
    if end > start {
        (start, end)
    } else {
        let mid = (start + end) / 2;
        (mid.min(len - 1), mid.min(len - 1) + 1)
    }
}

pub(crate) fn crop(img: &Image, x0: u32, y0: u32, x1: u32, y1: u32) -> Image {
    let ch = img.channels() as usize;
    let mut data = Vec::with_capacity((x1 - x0) as usize * (y1 - y0) as usize * ch);
    for y in y0..y1 {
        let a = img.index(x0, y, 0);
        let b = img.index(x1 - 1, y, 0) + ch;
        data.extend_from_slice(&img.data()[a..b]);
    }
    Image::new(x1 - x0, y1 - y0, img.channels(), data).expect("crop inside bounds")
}

fn trim(img: &Image, left: f64, right: f64, top: f64, bottom: f64) -> Result<Image, AugmentError> {
    let (x0, x1) = trim_bounds(img.width(), left, right);
    let (y0, y1) = trim_bounds(img.height(), top, bottom);
    if (x0, y0, x1, y1) == (0, 0, img.width(), img.height()) {
        return Ok(img.clone());
    }
    let inner = crop(img, x0, y0, x1, y1);
    Ok(resize(&inner, img.width(), img.height(), InterpMethod::Bilinear)?)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with edge replication; radius `ceil(3σ)`.
fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma == 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h, ch) = (img.width() as i64, img.height() as i64, img.channels() as usize);
    let idx = |x: i64, y: i64, c: usize| (y as usize * w as usize + x as usize) * ch + c;
    let mut tmp = vec![0f64; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                tmp[idx(x, y, c)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * img.data()[idx((x + k as i64 - r).clamp(0, w - 1), y, c)] as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0u8; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[idx(x, (y + k as i64 - r).clamp(0, h - 1), c)])
                    .sum();
                out[idx(x, y, c)] = clamp_u8(v);
            }
        }
    }
    Image::new(img.width(), img.height(), img.channels(), out).expect("same geometry")
}

fn gaussian_noise(img: &Image, scale: f64, seed: u64) -> Image {
    if scale == 0.0 {
        return img.clone();
    }
    let std = scale * 255.0;
    let mut rng = rng::rng_from_seed(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            clamp_u8(v as f64 + std * n)
        })
        .collect();
    Image::new(img.width(), img.height(), img.channels(), data).expect("same geometry")
}

fn map_channels(img: &Image, sel: ChannelSelector, f: impl Fn(u8) -> u8) -> Result<Image, AugmentError> {
    let ch = img.channels();
    let target = match sel {
        ChannelSelector::All => None,
        ChannelSelector::Single(c) => {
            if ch != 3 {
                return Err(AugmentError::ChannelMismatch { selected: c, channels: ch });
            }
            Some(c as usize)
        }
    };
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if target.is_none_or(|c| i % ch as usize == c) {
            *v = f(*v);
        }
    }
    Ok(out)
}

/// Bilinear sample with black outside the image.
fn sample_black(img: &Image, sx: f64, sy: f64, out: &mut [u8]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = sx.floor() as i64;
    let y0 = sy.floor() as i64;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    for (c, o) in out.iter_mut().enumerate() {
        let tap = |x: i64, y: i64| {
            if x < 0 || y < 0 || x >= w || y >= h {
                0.0
            } else {
                img.get(x as u32, y as u32, c as u8) as f64
            }
        };
        let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
        let bot = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
        *o = clamp_u8(top * (1.0 - fy) + bot * fy);
    }
}

/// Inverse-maps every output pixel through `src_of(dx, dy)`, offsets from the center.
fn warp(img: &Image, src_of: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let ch = img.channels() as usize;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let mut data = vec![0u8; img.data().len()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (sx, sy) = src_of(x as f64 - cx, y as f64 - cy);
            let i = img.index(x, y, 0);
            sample_black(img, sx + cx, sy + cy, &mut data[i..i + ch]);
        }
    }
    Image::new(img.width(), img.height(), img.channels(), data).expect("same geometry")
}

/// Rotates content counter-clockwise (as displayed) about the image center.
fn rotate(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    // With y pointing down, a visual counter-clockwise rotation maps
    // source (u, v) to (c*u + s*v, -s*u + c*v); invert that here.
    warp(img, |dx, dy| (c * dx - s * dy, s * dx + c * dy))
}

/// Zooms content about the center; crops when `factor > 1`, pads black below 1.
fn scale(img: &Image, factor: f64) -> Image {
    if factor == 1.0 {
        return img.clone();
    }
    warp(img, |dx, dy| (dx / factor, dy / factor))
}
