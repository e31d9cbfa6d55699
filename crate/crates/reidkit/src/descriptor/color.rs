//! Weighted stripe color histograms.

use super::colorspace::{rgb_to_hs, rgb_to_lab};
use super::{
    l1_normalize, stripe_count, ChannelDescriptor, ChannelId, ColorFamily, ComponentKind,
    DescriptorConfig, GaussianWeightMap, PersonImage, IMAGE_WIDTH,
};

/// Lab bin ranges: L in [0, 100], a and b clamped into [-128, 128).
const LAB_L_RANGE: (f64, f64) = (0.0, 100.0);
const LAB_AB_RANGE: (f64, f64) = (-128.0, 128.0);

#[inline]
fn range_bin(v: f64, range: (f64, f64), bins: usize) -> usize {
    let t = (v - range.0) / (range.1 - range.0);
    ((t * bins as f64) as isize).clamp(0, bins as isize - 1) as usize
}

/// Computes the stripe histogram descriptor for one color family over one
/// component band.
///
/// The band is cut into overlapping horizontal stripes; each stripe
/// accumulates a histogram where every pixel contributes its Gaussian
/// weight, and each stripe block is L1-normalized independently (an
/// entirely zero-weighted stripe stays all-zero).
pub fn extract_color(
    img: &PersonImage,
    family: ColorFamily,
    component: ComponentKind,
    weights: &GaussianWeightMap,
    config: &DescriptorConfig,
) -> ChannelDescriptor {
    let band = component.row_range();
    let n_stripes = stripe_count(band.len(), config);
    let block_len = match family {
        ColorFamily::Hs => config.hs_bins * config.hs_bins,
        ColorFamily::Rgb => 3 * config.rgb_bins,
        ColorFamily::Lab => 3 * config.lab_bins,
    };
    let mut values = vec![0.0; n_stripes * block_len];

    for stripe in 0..n_stripes {
        let r0 = band.start + stripe * config.stripe_stride;
        let block = &mut values[stripe * block_len..(stripe + 1) * block_len];
        for row in r0..r0 + config.stripe_height {
            for col in 0..IMAGE_WIDTH as usize {
                let w = weights.weight(row, col);
                if w == 0.0 {
                    continue;
                }
                let rgb = img.rgb(row, col);
                match family {
                    ColorFamily::Hs => {
                        let (h, s) = rgb_to_hs(rgb);
                        let hb = range_bin(h, (0.0, 360.0), config.hs_bins);
                        let sb = range_bin(s, (0.0, 1.0), config.hs_bins);
                        block[hb * config.hs_bins + sb] += w;
                    }
                    ColorFamily::Rgb => {
                        let bins = config.rgb_bins;
                        for c in 0..3 {
                            block[c * bins + range_bin(rgb[c] as f64, (0.0, 256.0), bins)] += w;
                        }
                    }
                    ColorFamily::Lab => {
                        let bins = config.lab_bins;
                        let (l, a, b) = rgb_to_lab(rgb);
                        block[range_bin(l, LAB_L_RANGE, bins)] += w;
                        block[bins + range_bin(a, LAB_AB_RANGE, bins)] += w;
                        block[2 * bins + range_bin(b, LAB_AB_RANGE, bins)] += w;
                    }
                }
            }
        }
        l1_normalize(block);
    }

    ChannelDescriptor {
        channel: ChannelId::new(family.family(), component),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::normalize_image;
    use image::RgbImage;

    fn person(rgb_fn: impl Fn(u32, u32) -> [u8; 3]) -> PersonImage {
        let img = RgbImage::from_fn(IMAGE_WIDTH, crate::descriptor::IMAGE_HEIGHT, |x, y| {
            image::Rgb(rgb_fn(x, y))
        });
        normalize_image(&img).unwrap()
    }

    #[test]
    fn constant_image_gives_one_hot_stripes() {
        let config = DescriptorConfig::default();
        let weights = GaussianWeightMap::from_config(&config);
        let img = person(|_, _| [200, 30, 90]);
        for family in [ColorFamily::Hs, ColorFamily::Rgb, ColorFamily::Lab] {
            for component in ComponentKind::ALL {
                let d = extract_color(&img, family, component, &weights, &config);
                let block_len = match family {
                    ColorFamily::Hs => 256,
                    _ => 96,
                };
                for block in d.values.chunks(block_len) {
                    let sum: f64 = block.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    let nonzero = block.iter().filter(|&&v| v > 0.0).count();
                    // One bin per marginal for RGB/Lab, one joint bin for HS.
                    let expected = match family {
                        ColorFamily::Hs => 1,
                        _ => 3,
                    };
                    assert_eq!(nonzero, expected);
                }
            }
        }
    }

    #[test]
    fn zero_weight_map_gives_zero_descriptor() {
        let config = DescriptorConfig::default();
        let n = (IMAGE_WIDTH * crate::descriptor::IMAGE_HEIGHT) as usize;
        let weights = GaussianWeightMap::from_raw(vec![0.0; n], 1.0, 1.0).unwrap();
        let img = person(|x, y| [(x % 256) as u8, (y % 256) as u8, 7]);
        let d = extract_color(&img, ColorFamily::Rgb, ComponentKind::Full, &weights, &config);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn red_blue_halves_balance_under_symmetric_weighting() {
        let config = DescriptorConfig::default();
        let weights = GaussianWeightMap::from_config(&config);
        let img = person(|x, _| if x < 32 { [255, 0, 0] } else { [0, 0, 255] });
        let d = extract_color(&img, ColorFamily::Rgb, ComponentKind::Upper, &weights, &config);
        let bins = config.rgb_bins;

        // Brute-force oracle: accumulate weights per bin directly.
        let band = ComponentKind::Upper.row_range();
        let n_stripes = stripe_count(band.len(), &config);
        for stripe in 0..n_stripes {
            let r0 = band.start + stripe * config.stripe_stride;
            let mut oracle = vec![0.0; 3 * bins];
            for row in r0..r0 + config.stripe_height {
                for col in 0..IMAGE_WIDTH as usize {
                    let w = weights.weight(row, col);
                    let rgb = if col < 32 { [255u8, 0, 0] } else { [0u8, 0, 255] };
                    for c in 0..3 {
                        oracle[c * bins + (rgb[c] as usize * bins / 256)] += w;
                    }
                }
            }
            l1_normalize(&mut oracle);
            let block = &d.values[stripe * 3 * bins..(stripe + 1) * 3 * bins];
            for (a, b) in block.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            // Red mass sits in the top R bin, blue mass in the top B bin,
            // and the symmetric Gaussian makes them equal.
            let red_mass = block[bins - 1];
            let blue_mass = block[2 * bins + bins - 1];
            assert!(red_mass > 0.0);
            assert!((red_mass - blue_mass).abs() < 1e-6);
        }
    }
}
