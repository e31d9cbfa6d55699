//! Person image representation: 20 histogram channels per image.
//!
//! Each image is resized to 126x64 and described by five feature families
//! (HS, RGB, Lab color histograms, HOG, uniform LBP), each computed over
//! four components: the full image and the upper, middle and lower thirds.
//! Color histograms are accumulated over overlapping horizontal stripes
//! with a center-weighted Gaussian so border pixels (mostly background)
//! count less; texture channels instead trim a fixed border before
//! computing gradients or patterns.
//!
//! Every histogram block is L1-normalized (HOG blocks are L2-normalized,
//! the usual convention for gradient energy), so descriptors are
//! nonnegative and comparable across images, which the chi-squared
//! kernels downstream rely on.

mod color;
mod colorspace;
mod hog;
mod lbp;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use color::extract_color;
pub use hog::extract_hog;
pub use lbp::{extract_lbp, uniform_pattern_bin, UNIFORM_PATTERN_COUNT};

pub(crate) use colorspace::luma;

/// Height every person image is normalized to.
pub const IMAGE_HEIGHT: u32 = 126;
/// Width every person image is normalized to.
pub const IMAGE_WIDTH: u32 = 64;

/// Which camera an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraId {
    A,
    B,
}

impl CameraId {
    pub fn dir_name(self) -> &'static str {
        match self {
            CameraId::A => "cam_a",
            CameraId::B => "cam_b",
        }
    }
}

/// Identity metadata attached to a normalized image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    /// Person identity label.
    pub source_id: String,
    pub camera_id: CameraId,
    /// Shot number for multi-shot datasets.
    pub sample_index: u32,
}

impl Default for ImageMeta {
    fn default() -> Self {
        ImageMeta {
            source_id: String::new(),
            camera_id: CameraId::A,
            sample_index: 0,
        }
    }
}

/// A person image normalized to 126x64 sRGB.
#[derive(Debug, Clone)]
pub struct PersonImage {
    pixels: RgbImage,
    pub meta: ImageMeta,
}

impl PersonImage {
    /// Wraps an already-normalized buffer. Fails unless it is exactly
    /// 126x64.
    pub fn from_normalized(pixels: RgbImage) -> Result<Self> {
        if pixels.width() != IMAGE_WIDTH || pixels.height() != IMAGE_HEIGHT {
            return Err(Error::DimensionMismatch {
                context: "normalized image size",
                left: pixels.width() as usize,
                right: pixels.height() as usize,
            });
        }
        Ok(PersonImage {
            pixels,
            meta: ImageMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: ImageMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    /// 8-bit sRGB triple at (row, col).
    #[inline]
    pub fn rgb(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels.get_pixel(col as u32, row as u32).0
    }
}

/// Resizes an arbitrary RGB image to the canonical 126x64 resolution.
///
/// Stretch-to-fit bilinear resampling; the aspect ratio is not preserved
/// because dataset crops are already person-tight. A source that is
/// already 126x64 is passed through unchanged.
pub fn normalize_image(raw: &RgbImage) -> Result<PersonImage> {
    if raw.width() == 0 || raw.height() == 0 {
        return Err(Error::EmptyImage);
    }
    if raw.width() == IMAGE_WIDTH && raw.height() == IMAGE_HEIGHT {
        return PersonImage::from_normalized(raw.clone());
    }
    let resized = resize_bilinear(raw, IMAGE_WIDTH, IMAGE_HEIGHT);
    PersonImage::from_normalized(resized)
}

/// Plain center-aligned bilinear resampling with edge clamping.
fn resize_bilinear(src: &RgbImage, dst_w: u32, dst_h: u32) -> RgbImage {
    let (sw, sh) = (src.width() as usize, src.height() as usize);
    let sx_scale = sw as f64 / dst_w as f64;
    let sy_scale = sh as f64 / dst_h as f64;
    let mut out = RgbImage::new(dst_w, dst_h);
    for dy in 0..dst_h as usize {
        let sy = ((dy as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dst_w as usize {
            let sx = ((dx as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            let mut px = [0u8; 3];
            for c in 0..3 {
                let p00 = src.get_pixel(x0 as u32, y0 as u32).0[c] as f64;
                let p10 = src.get_pixel(x1 as u32, y0 as u32).0[c] as f64;
                let p01 = src.get_pixel(x0 as u32, y1 as u32).0[c] as f64;
                let p11 = src.get_pixel(x1 as u32, y1 as u32).0[c] as f64;
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                let v = top + (bot - top) * fy;
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(dx as u32, dy as u32, image::Rgb(px));
        }
    }
    out
}

/// One of the four body components a channel is computed over.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Full,
    Upper,
    Middle,
    Lower,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 4] = [
        ComponentKind::Full,
        ComponentKind::Upper,
        ComponentKind::Middle,
        ComponentKind::Lower,
    ];

    /// Half-open pixel-row interval of this component within the
    /// 126-row image. Upper/middle/lower partition the image into three
    /// contiguous 42-row bands.
    pub fn row_range(self) -> std::ops::Range<usize> {
        let h = IMAGE_HEIGHT as usize;
        let band = h / 3;
        match self {
            ComponentKind::Full => 0..h,
            ComponentKind::Upper => 0..band,
            ComponentKind::Middle => band..2 * band,
            ComponentKind::Lower => 2 * band..h,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ComponentKind::Full => "full",
            ComponentKind::Upper => "upper",
            ComponentKind::Middle => "middle",
            ComponentKind::Lower => "lower",
        }
    }
}

/// One of the five feature families.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Hs,
    Rgb,
    Lab,
    Hog,
    Lbp,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Hs,
        Family::Rgb,
        Family::Lab,
        Family::Hog,
        Family::Lbp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Family::Hs => "hs",
            Family::Rgb => "rgb",
            Family::Lab => "lab",
            Family::Hog => "hog",
            Family::Lbp => "lbp",
        }
    }
}

/// Color families accepted by [`extract_color`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorFamily {
    Hs,
    Rgb,
    Lab,
}

impl ColorFamily {
    pub fn family(self) -> Family {
        match self {
            ColorFamily::Hs => Family::Hs,
            ColorFamily::Rgb => Family::Rgb,
            ColorFamily::Lab => Family::Lab,
        }
    }
}

/// A (feature family, component) pair. Exactly 20 distinct values exist.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct ChannelId {
    pub family: Family,
    pub component: ComponentKind,
}

impl ChannelId {
    pub fn new(family: Family, component: ComponentKind) -> Self {
        ChannelId { family, component }
    }

    /// All 20 channels in canonical (family, component) order.
    pub fn all() -> Vec<ChannelId> {
        let mut out = Vec::with_capacity(20);
        for family in Family::ALL {
            for component in ComponentKind::ALL {
                out.push(ChannelId { family, component });
            }
        }
        out
    }

    /// Position in the canonical ordering, 0..20.
    pub fn index(self) -> usize {
        let f = Family::ALL.iter().position(|&x| x == self.family).unwrap();
        let c = ComponentKind::ALL
            .iter()
            .position(|&x| x == self.component)
            .unwrap();
        f * ComponentKind::ALL.len() + c
    }

    pub fn label(self) -> String {
        format!("{}_{}", self.family.label(), self.component.label())
    }
}

impl std::fmt::Display for ChannelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// One normalized feature vector for one channel of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDescriptor {
    pub channel: ChannelId,
    pub values: Vec<f64>,
}

/// Tunable extraction constants. Defaults follow common re-id practice;
/// every value is surfaced in the pipeline config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    /// Bins per axis of the joint hue-saturation histogram (16 -> 256 bins).
    pub hs_bins: usize,
    /// Bins per marginal RGB histogram.
    pub rgb_bins: usize,
    /// Bins per marginal Lab histogram.
    pub lab_bins: usize,
    /// Stripe height in rows for color histograms.
    pub stripe_height: usize,
    /// Stripe stride in rows (stride < height gives overlap).
    pub stripe_stride: usize,
    /// Horizontal Gaussian weighting std-dev in pixels.
    pub sigma_x: f64,
    /// Vertical std-dev; infinite disables vertical weighting.
    pub sigma_y: f64,
    /// HOG cell side in pixels.
    pub hog_cell: usize,
    /// HOG block side in cells.
    pub hog_block: usize,
    /// Unsigned orientation bins over [0, 180).
    pub hog_bins: usize,
    /// Pixels removed from each image border for texture channels.
    pub border_trim: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            hs_bins: 16,
            rgb_bins: 32,
            lab_bins: 32,
            stripe_height: 16,
            stripe_stride: 8,
            sigma_x: IMAGE_WIDTH as f64 / 4.0,
            sigma_y: f64::INFINITY,
            hog_cell: 8,
            hog_block: 2,
            hog_bins: 4,
            border_trim: 6,
        }
    }
}

/// Per-pixel weights favoring the horizontal center of the image, so
/// background flanking the person contributes less to color histograms.
#[derive(Debug, Clone)]
pub struct GaussianWeightMap {
    weights: Vec<f64>,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl GaussianWeightMap {
    /// Separable Gaussian centered on the image; an infinite sigma
    /// disables weighting along that axis.
    pub fn new(sigma_x: f64, sigma_y: f64) -> Self {
        let (w, h) = (IMAGE_WIDTH as usize, IMAGE_HEIGHT as usize);
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let axis = |i: f64, c: f64, sigma: f64| -> f64 {
            if sigma.is_finite() {
                (-((i - c) * (i - c)) / (2.0 * sigma * sigma)).exp()
            } else {
                1.0
            }
        };
        let mut weights = Vec::with_capacity(w * h);
        for r in 0..h {
            let wy = axis(r as f64, cy, sigma_y);
            for c in 0..w {
                weights.push(wy * axis(c as f64, cx, sigma_x));
            }
        }
        GaussianWeightMap {
            weights,
            sigma_x,
            sigma_y,
        }
    }

    pub fn from_config(config: &DescriptorConfig) -> Self {
        GaussianWeightMap::new(config.sigma_x, config.sigma_y)
    }

    /// Builds a map from raw per-pixel weights (must lie in [0, 1]).
    pub fn from_raw(weights: Vec<f64>, sigma_x: f64, sigma_y: f64) -> Result<Self> {
        let expected = (IMAGE_WIDTH * IMAGE_HEIGHT) as usize;
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "weight map size",
                left: weights.len(),
                right: expected,
            });
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::Config("weight map entries must lie in [0, 1]".into()));
        }
        Ok(GaussianWeightMap {
            weights,
            sigma_x,
            sigma_y,
        })
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * IMAGE_WIDTH as usize + col]
    }
}

/// Extracts all 20 channel descriptors in canonical (family, component)
/// order. Pure function of the pixel content: two identical images give
/// bitwise-identical descriptor sets.
pub fn extract_all(img: &PersonImage, config: &DescriptorConfig) -> Result<Vec<ChannelDescriptor>> {
    let weights = GaussianWeightMap::from_config(config);
    extract_all_with_weights(img, config, &weights)
}

/// Same as [`extract_all`] but reuses a prebuilt weight map.
pub fn extract_all_with_weights(
    img: &PersonImage,
    config: &DescriptorConfig,
    weights: &GaussianWeightMap,
) -> Result<Vec<ChannelDescriptor>> {
    let mut out = Vec::with_capacity(20);
    for family in Family::ALL {
        for component in ComponentKind::ALL {
            let desc = match family {
                Family::Hs => extract_color(img, ColorFamily::Hs, component, weights, config),
                Family::Rgb => extract_color(img, ColorFamily::Rgb, component, weights, config),
                Family::Lab => extract_color(img, ColorFamily::Lab, component, weights, config),
                Family::Hog => extract_hog(img, component, config)?,
                Family::Lbp => extract_lbp(img, component, config)?,
            };
            out.push(desc);
        }
    }
    Ok(out)
}

/// Number of color stripes a band of `band_rows` rows yields.
pub(crate) fn stripe_count(band_rows: usize, config: &DescriptorConfig) -> usize {
    if band_rows < config.stripe_height {
        0
    } else {
        (band_rows - config.stripe_height) / config.stripe_stride + 1
    }
}

/// Texture region of a component: its row band intersected with the
/// border-trimmed image, plus the trimmed column range.
pub(crate) fn texture_region(
    component: ComponentKind,
    config: &DescriptorConfig,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let trim = config.border_trim;
    let h = IMAGE_HEIGHT as usize;
    let w = IMAGE_WIDTH as usize;
    let band = component.row_range();
    let rows = band.start.max(trim)..band.end.min(h - trim);
    let cols = trim..w - trim;
    (rows, cols)
}

/// Expected descriptor length for a channel under `config`. Identical
/// for all images; the Gram computation relies on this fixed shape.
pub fn channel_dim(channel: ChannelId, config: &DescriptorConfig) -> usize {
    match channel.family {
        Family::Hs => {
            stripe_count(channel.component.row_range().len(), config) * config.hs_bins * config.hs_bins
        }
        Family::Rgb => {
            stripe_count(channel.component.row_range().len(), config) * 3 * config.rgb_bins
        }
        Family::Lab => {
            stripe_count(channel.component.row_range().len(), config) * 3 * config.lab_bins
        }
        Family::Hog => {
            let (rows, cols) = texture_region(channel.component, config);
            let cell_rows = rows.len() / config.hog_cell;
            let cell_cols = cols.len() / config.hog_cell;
            let b = config.hog_block;
            if cell_rows < b || cell_cols < b {
                0
            } else {
                (cell_rows - b + 1) * (cell_cols - b + 1) * b * b * config.hog_bins
            }
        }
        Family::Lbp => UNIFORM_PATTERN_COUNT,
    }
}

/// L1-normalizes one histogram block in place; an all-zero block stays
/// all-zero.
pub(crate) fn l1_normalize(block: &mut [f64]) {
    let sum: f64 = block.iter().sum();
    if sum > 0.0 {
        for v in block.iter_mut() {
            *v /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb(rgb))
    }

    /// Reference bilinear resampler used as an independent oracle: plain
    /// per-pixel loops, center-aligned sampling, f64 math.
    fn oracle_bilinear(src: &RgbImage, dw: u32, dh: u32) -> Vec<[f64; 3]> {
        let (sw, sh) = (src.width() as i64, src.height() as i64);
        let mut out = Vec::new();
        for dy in 0..dh as i64 {
            for dx in 0..dw as i64 {
                let sx = ((dx as f64 + 0.5) * sw as f64 / dw as f64 - 0.5)
                    .clamp(0.0, (sw - 1) as f64);
                let sy = ((dy as f64 + 0.5) * sh as f64 / dh as f64 - 0.5)
                    .clamp(0.0, (sh - 1) as f64);
                let (x0, y0) = (sx.floor() as i64, sy.floor() as i64);
                let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let mut px = [0.0f64; 3];
                for c in 0..3 {
                    let at = |x: i64, y: i64| src.get_pixel(x as u32, y as u32).0[c] as f64;
                    px[c] = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                        + at(x1, y0) * fx * (1.0 - fy)
                        + at(x0, y1) * (1.0 - fx) * fy
                        + at(x1, y1) * fx * fy;
                }
                out.push(px);
            }
        }
        out
    }

    #[test]
    fn normalize_identity_size_is_passthrough() {
        let mut img = constant_image(IMAGE_WIDTH, IMAGE_HEIGHT, [1, 2, 3]);
        img.put_pixel(10, 20, image::Rgb([200, 100, 50]));
        let norm = normalize_image(&img).unwrap();
        assert_eq!(norm.pixels(), &img);
    }

    #[test]
    fn normalize_constant_image_stays_constant() {
        let img = constant_image(128, 252, [10, 20, 30]);
        let norm = normalize_image(&img).unwrap();
        assert_eq!(norm.pixels().width(), IMAGE_WIDTH);
        assert_eq!(norm.pixels().height(), IMAGE_HEIGHT);
        for px in norm.pixels().pixels() {
            assert_eq!(px.0, [10, 20, 30]);
        }
    }

    #[test]
    fn normalize_rejects_empty() {
        let img = RgbImage::new(0, 5);
        assert!(matches!(normalize_image(&img), Err(Error::EmptyImage)));
    }

    #[test]
    fn normalize_checkerboard_matches_reference_resampler() {
        let mut img = RgbImage::new(32, 63);
        for y in 0..63 {
            for x in 0..32 {
                let v = if (x + y) % 2 == 0 { 255 } else { 0 };
                img.put_pixel(x, y, image::Rgb([v, v, v]));
            }
        }
        let norm = normalize_image(&img).unwrap();
        let oracle = oracle_bilinear(&img, IMAGE_WIDTH, IMAGE_HEIGHT);

        let mut in_mean = 0.0;
        for px in img.pixels() {
            in_mean += px.0[0] as f64;
        }
        in_mean /= (32 * 63) as f64;
        let mut out_mean = 0.0;
        for px in norm.pixels().pixels() {
            out_mean += px.0[0] as f64;
        }
        out_mean /= (IMAGE_WIDTH * IMAGE_HEIGHT) as f64;
        assert!(
            (in_mean - out_mean).abs() <= 1.0,
            "mean drifted: {in_mean} vs {out_mean}"
        );

        for (i, px) in norm.pixels().pixels().enumerate() {
            for c in 0..3 {
                let diff = (px.0[c] as f64 - oracle[i][c]).abs();
                assert!(diff <= 1.0, "pixel {i} channel {c} off by {diff}");
            }
        }
    }

    #[test]
    fn exactly_twenty_channels_in_stable_order() {
        let ids = ChannelId::all();
        assert_eq!(ids.len(), 20);
        for (i, id) in ids.iter().enumerate() {
            assert_eq!(id.index(), i);
        }
        let set: std::collections::HashSet<_> = ids.iter().collect();
        assert_eq!(set.len(), 20);
    }

    #[test]
    fn components_partition_the_image() {
        let full = ComponentKind::Full.row_range();
        let upper = ComponentKind::Upper.row_range();
        let middle = ComponentKind::Middle.row_range();
        let lower = ComponentKind::Lower.row_range();
        assert_eq!(upper.len() + middle.len() + lower.len(), full.len());
        assert_eq!(upper.end, middle.start);
        assert_eq!(middle.end, lower.start);
        assert_eq!(lower.end, full.end);
        assert_eq!(upper.len(), 42);
    }

    #[test]
    fn weight_map_peaks_at_center_and_decays() {
        let map = GaussianWeightMap::new(16.0, f64::INFINITY);
        let mid_left = map.weight(0, 31);
        let mid_right = map.weight(0, 32);
        assert!((mid_left - mid_right).abs() < 1e-12);
        for c in 1..32 {
            assert!(map.weight(0, c) > map.weight(0, c - 1));
        }
        for c in 33..64 {
            assert!(map.weight(0, c) < map.weight(0, c - 1));
        }
        // No vertical falloff with infinite sigma_y.
        assert_eq!(map.weight(0, 10), map.weight(125, 10));
    }

    #[test]
    fn extract_all_returns_twenty_deterministic_descriptors() {
        let config = DescriptorConfig::default();
        let mut img = constant_image(IMAGE_WIDTH, IMAGE_HEIGHT, [120, 40, 200]);
        img.put_pixel(5, 5, image::Rgb([0, 255, 0]));
        let person = normalize_image(&img).unwrap();
        let a = extract_all(&person, &config).unwrap();
        let b = extract_all(&person, &config).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        for (i, d) in a.iter().enumerate() {
            assert_eq!(d.channel, ChannelId::all()[i]);
            assert_eq!(d.values.len(), channel_dim(d.channel, &config));
            assert!(d.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn channel_dims_match_default_geometry() {
        let config = DescriptorConfig::default();
        let dim = |f, c| channel_dim(ChannelId::new(f, c), &config);
        // 14 stripes over 126 rows, 4 over each 42-row band.
        assert_eq!(dim(Family::Hs, ComponentKind::Full), 14 * 256);
        assert_eq!(dim(Family::Hs, ComponentKind::Upper), 4 * 256);
        assert_eq!(dim(Family::Rgb, ComponentKind::Full), 14 * 96);
        assert_eq!(dim(Family::Lab, ComponentKind::Lower), 4 * 96);
        // Trimmed texture region is 114x52 full, 36/42/36 rows per band.
        assert_eq!(dim(Family::Hog, ComponentKind::Full), 13 * 5 * 16);
        assert_eq!(dim(Family::Hog, ComponentKind::Upper), 3 * 5 * 16);
        assert_eq!(dim(Family::Hog, ComponentKind::Middle), 4 * 5 * 16);
        assert_eq!(dim(Family::Hog, ComponentKind::Lower), 3 * 5 * 16);
        assert_eq!(dim(Family::Lbp, ComponentKind::Full), 58);
    }
}
