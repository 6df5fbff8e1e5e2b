//! Histogram of oriented gradients with L2-Hys block normalization.

use super::{DescriptorError, DescriptorId, FeatureVector};
use crate::imagecore::Image;

const NORM_EPS: f64 = 1e-5;
const CLIP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HogParams {
    /// Cell side in pixels.
    pub cell: u32,
    /// Block side in cells.
    pub block: u32,
    pub bins: u32,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams { cell: 8, block: 2, bins: 9 }
    }
}

/// Centered-difference gradients with edge replication.
fn gradients(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let px = |x: i64, y: i64| img.get(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32, 0) as f64;
    let mut mag = Vec::with_capacity((w * h) as usize);
    let mut ang = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let gx = px(x + 1, y) - px(x - 1, y);
            let gy = px(x, y + 1) - px(x, y - 1);
            mag.push((gx * gx + gy * gy).sqrt());
            let mut a = gy.atan2(gx).to_degrees();
            if a < 0.0 {
                a += 180.0;
            }
            if a >= 180.0 {
                a -= 180.0;
            }
            ang.push(a);
        }
    }
    (mag, ang)
}

/// Splits an unsigned orientation between its two nearest bins.
/// Bin `b` is centered on `b * 180 / bins` degrees.
pub fn orientation_bins(angle: f64, bins: u32) -> (usize, usize, f64) {
    let pos = angle / (180.0 / bins as f64);
    let lower = pos.floor();
    let frac = pos - lower;
    let lo = (lower as i64).rem_euclid(bins as i64) as usize;
    (lo, (lo + 1) % bins as usize, frac)
}

pub fn hog_descriptor(img: &Image, params: HogParams) -> Result<FeatureVector, DescriptorError> {
    if img.channels() != 1 {
        return Err(DescriptorError::NotGrayscale(img.channels()));
    }
    let HogParams { cell, block, bins } = params;
    if bins < 2 || cell == 0 || block == 0 {
        return Err(DescriptorError::InvalidParams(format!("{params:?}")));
    }
    let cells_x = img.width() / cell;
    let cells_y = img.height() / cell;
    if cells_x < block || cells_y < block {
        return Err(DescriptorError::TooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let (mag, ang) = gradients(img);
    let nb = bins as usize;
    let (cx, cy) = (cells_x as usize, cells_y as usize);
    let mut cells = vec![0f64; cx * cy * nb];
    let w = img.width() as usize;
    // Partial cells at the right and bottom edges are dropped.
    for y in 0..cy * cell as usize {
        for x in 0..cx * cell as usize {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let (lo, hi, frac) = orientation_bins(ang[y * w + x], bins);
            let base = ((y / cell as usize) * cx + x / cell as usize) * nb;
            cells[base + lo] += m * (1.0 - frac);
            cells[base + hi] += m * frac;
        }
    }
    let bx = cx - block as usize + 1;
    let by = cy - block as usize + 1;
    let block_len = (block * block) as usize * nb;
    let mut out = Vec::with_capacity(bx * by * block_len);
    let mut v = vec![0f64; block_len];
    for yb in 0..by {
        for xb in 0..bx {
            let mut k = 0;
            for dy in 0..block as usize {
                for dx in 0..block as usize {
                    let base = ((yb + dy) * cx + xb + dx) * nb;
                    v[k..k + nb].copy_from_slice(&cells[base..base + nb]);
                    k += nb;
                }
            }
            l2_normalize(&mut v);
            v.iter_mut().for_each(|x| *x = x.min(CLIP));
            l2_normalize(&mut v);
            out.extend(v.iter().map(|&x| x as f32));
        }
    }
    FeatureVector::new(DescriptorId::Hog, (by as u32, bx as u32, block_len as u32), out)
}

fn l2_normalize(v: &mut [f64]) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_arithmetic() {
        let img = Image::filled(64, 64, &[0]).unwrap();
        let f = hog_descriptor(&img, HogParams::default()).unwrap();
        assert_eq!(f.values.len(), 1764);
        assert_eq!(f.layout, (7, 7, 36));
    }

    #[test]
    fn constant_image_has_zero_descriptor() {
        let img = Image::filled(32, 24, &[123]).unwrap();
        let f = hog_descriptor(&img, HogParams::default()).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge_lands_in_zero_degree_bin() {
        let (w, h) = (32u32, 32u32);
        let data = (0..w * h).map(|i| if i % w >= w / 2 { 255 } else { 0 }).collect();
        let img = Image::new(w, h, 1, data).unwrap();
        let params = HogParams { cell: 8, block: 1, bins: 9 };
        let f = hog_descriptor(&img, params).unwrap();
        // Brute force: every nonzero-gradient pixel has gy = 0 and gx > 0.
        let (mag, ang) = gradients(&img);
        for (m, a) in mag.iter().zip(&ang) {
            if *m > 0.0 {
                assert_eq!(*a, 0.0);
            }
        }
        let mut mass = [0f32; 9];
        for cell in f.values.chunks_exact(9) {
            for (b, v) in cell.iter().enumerate() {
                mass[b] += v;
            }
        }
        assert!(mass[0] > 0.0);
        assert!(mass[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_interpolation_splits_between_centers() {
        assert_eq!(orientation_bins(0.0, 9), (0, 1, 0.0));
        let (lo, hi, frac) = orientation_bins(175.0, 9);
        assert_eq!((lo, hi), (8, 0));
        assert!((frac - 0.75).abs() < 1e-12);
    }

    #[test]
    fn too_small_for_one_block() {
        let img = Image::filled(15, 40, &[0]).unwrap();
        assert!(matches!(
            hog_descriptor(&img, HogParams::default()),
            Err(DescriptorError::TooSmall { .. })
        ));
    }
}
