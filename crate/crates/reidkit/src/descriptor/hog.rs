//! Gradient orientation histograms over a cell grid.

use super::{
    luma, texture_region, ChannelDescriptor, ChannelId, ComponentKind, DescriptorConfig, Family,
    PersonImage, IMAGE_HEIGHT, IMAGE_WIDTH,
};
use crate::error::{Error, Result};

/// Computes the HOG descriptor for one component band.
///
/// The border-trimmed band is divided into square cells; each cell
/// accumulates a magnitude-weighted histogram of unsigned gradient
/// orientations. Overlapping blocks of cells (stride one cell) are
/// L2-normalized and concatenated. Gradients use central differences on
/// the luma image; no Gaussian pixel weighting is applied to texture
/// channels.
pub fn extract_hog(
    img: &PersonImage,
    component: ComponentKind,
    config: &DescriptorConfig,
) -> Result<ChannelDescriptor> {
    let (rows, cols) = texture_region(component, config);
    let cell = config.hog_cell;
    let cell_rows = rows.len() / cell;
    let cell_cols = cols.len() / cell;
    if cell_rows == 0 || cell_cols == 0 {
        return Err(Error::ComponentTooSmall {
            rows: rows.len().min(cols.len()),
            min_rows: cell,
        });
    }

    let bins = config.hog_bins;
    let mut cells = vec![0.0; cell_rows * cell_cols * bins];
    for cr in 0..cell_rows {
        for cc in 0..cell_cols {
            let hist = &mut cells[(cr * cell_cols + cc) * bins..(cr * cell_cols + cc + 1) * bins];
            for dr in 0..cell {
                for dc in 0..cell {
                    let r = rows.start + cr * cell + dr;
                    let c = cols.start + cc * cell + dc;
                    let (mag, bin) = gradient(img, r, c, bins);
                    hist[bin] += mag;
                }
            }
        }
    }

    // Blocks of hog_block x hog_block cells, stride one cell, each
    // L2-normalized independently (zero blocks stay zero).
    let b = config.hog_block;
    let mut values = Vec::new();
    if cell_rows >= b && cell_cols >= b {
        values.reserve((cell_rows - b + 1) * (cell_cols - b + 1) * b * b * bins);
        for br in 0..=cell_rows - b {
            for bc in 0..=cell_cols - b {
                let start = values.len();
                for dr in 0..b {
                    for dc in 0..b {
                        let idx = ((br + dr) * cell_cols + (bc + dc)) * bins;
                        values.extend_from_slice(&cells[idx..idx + bins]);
                    }
                }
                let norm: f64 = values[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in &mut values[start..] {
                        *v /= norm;
                    }
                }
            }
        }
    }

    Ok(ChannelDescriptor {
        channel: ChannelId::new(Family::Hog, component),
        values,
    })
}

/// Central-difference gradient magnitude and unsigned orientation bin at
/// one pixel. Orientations live in [0, 180) split into `bins` equal
/// sectors.
#[inline]
fn gradient(img: &PersonImage, r: usize, c: usize, bins: usize) -> (f64, usize) {
    let h = IMAGE_HEIGHT as usize;
    let w = IMAGE_WIDTH as usize;
    let at = |rr: usize, cc: usize| luma(img.rgb(rr, cc));
    let gx = at(r, (c + 1).min(w - 1)) - at(r, c.saturating_sub(1));
    let gy = at((r + 1).min(h - 1), c) - at(r.saturating_sub(1), c);
    let mag = gx.hypot(gy);
    if mag == 0.0 {
        return (0.0, 0);
    }
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    let bin = ((deg / (180.0 / bins as f64)) as usize).min(bins - 1);
    (mag, bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::normalize_image;
    use image::RgbImage;

    fn person(rgb_fn: impl Fn(u32, u32) -> [u8; 3]) -> PersonImage {
        let img = RgbImage::from_fn(IMAGE_WIDTH, IMAGE_HEIGHT, |x, y| image::Rgb(rgb_fn(x, y)));
        normalize_image(&img).unwrap()
    }

    /// Mass per orientation bin, summed over the whole descriptor.
    fn bin_masses(values: &[f64], bins: usize) -> Vec<f64> {
        let mut mass = vec![0.0; bins];
        for (i, v) in values.iter().enumerate() {
            mass[i % bins] += v;
        }
        mass
    }

    #[test]
    fn constant_image_gives_zero_descriptor() {
        let config = DescriptorConfig::default();
        let img = person(|_, _| [77, 77, 77]);
        for component in ComponentKind::ALL {
            let d = extract_hog(&img, component, &config).unwrap();
            assert!(!d.values.is_empty());
            assert!(d.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vertical_edge_concentrates_in_horizontal_gradient_bin() {
        let config = DescriptorConfig::default();
        let img = person(|x, _| if x < 32 { [0, 0, 0] } else { [255, 255, 255] });
        let d = extract_hog(&img, ComponentKind::Full, &config).unwrap();
        let mass = bin_masses(&d.values, config.hog_bins);
        let total: f64 = mass.iter().sum();
        assert!(total > 0.0);
        // Gradient points along +x: orientation 0 degrees, bin 0.
        assert!(mass[0] / total > 0.99, "bin masses {mass:?}");
    }

    #[test]
    fn horizontal_edge_uses_the_orthogonal_bin() {
        let config = DescriptorConfig::default();
        let vertical = person(|x, _| if x < 32 { [0, 0, 0] } else { [255, 255, 255] });
        let horizontal = person(|_, y| if y < 63 { [0, 0, 0] } else { [255, 255, 255] });
        let dv = extract_hog(&vertical, ComponentKind::Full, &config).unwrap();
        let dh = extract_hog(&horizontal, ComponentKind::Full, &config).unwrap();
        let mv = bin_masses(&dv.values, config.hog_bins);
        let mh = bin_masses(&dh.values, config.hog_bins);
        // 90 degrees falls in bin 2 of 4.
        let th: f64 = mh.iter().sum();
        assert!(mh[2] / th > 0.99, "bin masses {mh:?}");
        assert!(mv[0] > 0.0 && mh[2] > 0.0);
    }

    #[test]
    fn cell_histograms_match_reference_computation() {
        let config = DescriptorConfig::default();
        let img = person(|x, y| {
            let v = ((x * 7 + y * 13) % 251) as u8;
            [v, v.wrapping_mul(3), v.wrapping_add(40)]
        });
        let d = extract_hog(&img, ComponentKind::Middle, &config).unwrap();

        // Reference: recompute cells with independent loops, then blocks.
        let (rows, cols) = texture_region(ComponentKind::Middle, &config);
        let (cell, bins, b) = (config.hog_cell, config.hog_bins, config.hog_block);
        let cell_rows = rows.len() / cell;
        let cell_cols = cols.len() / cell;
        let mut cells = vec![vec![0.0f64; bins]; cell_rows * cell_cols];
        for r in rows.start..rows.start + cell_rows * cell {
            for c in cols.start..cols.start + cell_cols * cell {
                let gx = luma(img.rgb(r, c + 1)) - luma(img.rgb(r, c - 1));
                let gy = luma(img.rgb(r + 1, c)) - luma(img.rgb(r - 1, c));
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let mut deg = gy.atan2(gx).to_degrees();
                if deg < 0.0 {
                    deg += 180.0;
                }
                if deg >= 180.0 {
                    deg -= 180.0;
                }
                let bin = ((deg / 45.0) as usize).min(bins - 1);
                let (cr, cc) = ((r - rows.start) / cell, (c - cols.start) / cell);
                cells[cr * cell_cols + cc][bin] += mag;
            }
        }
        let mut expected = Vec::new();
        for br in 0..=cell_rows - b {
            for bc in 0..=cell_cols - b {
                let start = expected.len();
                for dr in 0..b {
                    for dc in 0..b {
                        expected.extend_from_slice(&cells[(br + dr) * cell_cols + bc + dc]);
                    }
                }
                let norm: f64 = expected[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in &mut expected[start..] {
                        *v /= norm;
                    }
                }
            }
        }
        assert_eq!(d.values.len(), expected.len());
        for (a, e) in d.values.iter().zip(expected.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
