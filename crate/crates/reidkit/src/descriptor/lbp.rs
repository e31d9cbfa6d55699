//! Uniform local binary patterns.

use std::sync::OnceLock;

use super::{
    l1_normalize, luma, texture_region, ChannelDescriptor, ChannelId, ComponentKind,
    DescriptorConfig, Family, PersonImage,
};
use crate::error::{Error, Result};

/// Number of 8-bit patterns with at most two circular 0/1 transitions.
pub const UNIFORM_PATTERN_COUNT: usize = 58;

/// Bin index of a uniform pattern, or `None` for non-uniform patterns,
/// which are discarded rather than pooled.
pub fn uniform_pattern_bin(pattern: u8) -> Option<usize> {
    static TABLE: OnceLock<[i8; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [-1i8; 256];
        let mut bin = 0i8;
        for p in 0..=255u8 {
            let transitions = (p ^ p.rotate_left(1)).count_ones();
            if transitions <= 2 {
                table[p as usize] = bin;
                bin += 1;
            }
        }
        debug_assert_eq!(bin as usize, UNIFORM_PATTERN_COUNT);
        table
    });
    let v = table[pattern as usize];
    (v >= 0).then_some(v as usize)
}

/// Computes the uniform LBP histogram for one component band.
///
/// Eight neighbors on a radius-1 circle, bilinearly interpolated where
/// they fall off the pixel grid; a neighbor greater than or equal to the
/// center sets its bit. The histogram over the 58 uniform patterns is
/// L1-normalized per band.
pub fn extract_lbp(
    img: &PersonImage,
    component: ComponentKind,
    config: &DescriptorConfig,
) -> Result<ChannelDescriptor> {
    let (rows, cols) = texture_region(component, config);
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::ComponentTooSmall {
            rows: rows.len(),
            min_rows: 1,
        });
    }

    let mut hist = vec![0.0; UNIFORM_PATTERN_COUNT];
    for r in rows {
        for c in cols.clone() {
            let pattern = lbp_code(img, r, c);
            if let Some(bin) = uniform_pattern_bin(pattern) {
                hist[bin] += 1.0;
            }
        }
    }
    l1_normalize(&mut hist);

    Ok(ChannelDescriptor {
        channel: ChannelId::new(Family::Lbp, component),
        values: hist,
    })
}

/// Circularly sampled 8-neighbor code at (row, col). Bit k corresponds
/// to the neighbor at angle 45k degrees (bit 0 is the right neighbor).
pub(crate) fn lbp_code(img: &PersonImage, row: usize, col: usize) -> u8 {
    let center = luma(img.rgb(row, col));
    let mut code = 0u8;
    for k in 0..8u32 {
        let theta = std::f64::consts::FRAC_PI_4 * k as f64;
        let x = col as f64 + theta.cos();
        let y = row as f64 - theta.sin();
        if sample_luma(img, x, y) >= center {
            code |= 1 << k;
        }
    }
    code
}

/// Bilinear luma sample at a fractional position. Callers stay at least
/// one pixel inside the image, so no clamping branch is needed beyond
/// rounding the integer corners.
fn sample_luma(img: &PersonImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    if fx == 0.0 && fy == 0.0 {
        return luma(img.rgb(y0, x0));
    }
    let at = |r: usize, c: usize| luma(img.rgb(r, c));
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}
