//! Uniform local binary patterns (8 neighbors, radius 1) over a cell grid.

use super::{DescriptorError, DescriptorId, FeatureVector};
use crate::imagecore::Image;

pub const LBP_BINS: usize = 59;

/// Neighbor offsets, clockwise from the top-left; bit `i` is neighbor `i`.
const NEIGHBORS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// Number of 0/1 transitions around the circular 8-bit pattern.
pub fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Maps each 8-bit code to its histogram bin: the 58 uniform patterns take
/// bins 0..58 in ascending code order, everything else shares bin 58.
pub fn uniform_bin_table() -> [u8; 256] {
    let mut table = [(LBP_BINS - 1) as u8; 256];
    let mut next = 0u8;
    for code in 0..=255u8 {
        if transitions(code) <= 2 {
            table[code as usize] = next;
            next += 1;
        }
    }
    debug_assert_eq!(next as usize, LBP_BINS - 1);
    table
}

/// Pattern at interior pixel `(x, y)`: bit set where the neighbor is strictly brighter.
pub fn lbp_code(img: &Image, x: u32, y: u32) -> u8 {
    let center = img.get(x, y, 0);
    let mut code = 0u8;
    for (bit, &(dx, dy)) in NEIGHBORS.iter().enumerate() {
        let v = img.get((x as i32 + dx) as u32, (y as i32 + dy) as u32, 0);
        if v > center {
            code |= 1 << bit;
        }
    }
    code
}

/// Cell boundaries along an axis: cell `i` covers `[i*len/n, (i+1)*len/n)`.
fn cell_of(pos: u32, len: u32, n: u32) -> usize {
    ((pos as u64 * n as u64) / len as u64) as usize
}

pub fn lbp_descriptor(img: &Image, rows: u32, cols: u32) -> Result<FeatureVector, DescriptorError> {
    if img.channels() != 1 {
        return Err(DescriptorError::NotGrayscale(img.channels()));
    }
    if img.width() < 3 || img.height() < 3 || rows == 0 || cols == 0 {
        return Err(DescriptorError::TooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let table = uniform_bin_table();
    let (rows_u, cols_u) = (rows as usize, cols as usize);
    let mut hist = vec![0f64; rows_u * cols_u * LBP_BINS];
    for y in 1..img.height() - 1 {
        let r = cell_of(y, img.height(), rows);
        for x in 1..img.width() - 1 {
            let c = cell_of(x, img.width(), cols);
            let bin = table[lbp_code(img, x, y) as usize] as usize;
            hist[(r * cols_u + c) * LBP_BINS + bin] += 1.0;
        }
    }
    for cell in hist.chunks_exact_mut(LBP_BINS) {
        let total: f64 = cell.iter().sum();
        if total > 0.0 {
            cell.iter_mut().for_each(|v| *v /= total);
        }
    }
    FeatureVector::new(
        DescriptorId::Lbp,
        (rows, cols, LBP_BINS as u32),
        hist.into_iter().map(|v| v as f32).collect(),
    )
}
