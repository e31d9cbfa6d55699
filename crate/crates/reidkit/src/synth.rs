//! Deterministic two-camera toy dataset.
//!
//! Each identity renders as a stack of colored horizontal stripes with a
//! per-identity sinusoidal luminance texture, flanked by noisy background
//! columns. Camera b applies a per-channel affine color transform plus
//! pixel noise, mimicking a cross-view appearance change. The layout on
//! disk matches real datasets (`cam_a/<person>_<shot>.png`), so the whole
//! pipeline runs on it unchanged.

use std::path::Path;

use image::RgbImage;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::error::{Error, Result};

/// Parameters of the generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Identities present in both cameras.
    pub identity_count: usize,
    pub shots_per_camera: u32,
    /// Camera-b per-channel gain.
    pub gain: [f64; 3],
    /// Camera-b per-channel offset.
    pub offset: [f64; 3],
    /// Per-pixel Gaussian noise standard deviation, in 8-bit units.
    pub noise: f64,
    /// Extra camera-b-only identities (gallery distractors).
    pub distractor_count: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            identity_count: 50,
            shots_per_camera: 1,
            gain: [0.7, 1.0, 1.3],
            offset: [-15.0, 5.0, 20.0],
            noise: 20.0,
            distractor_count: 0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.identity_count < 4 {
            return Err(Error::Config(format!(
                "identity_count must be at least 4, got {}",
                self.identity_count
            )));
        }
        if self.shots_per_camera == 0 {
            return Err(Error::Config("shots_per_camera must be at least 1".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be nonnegative".into()));
        }
        Ok(())
    }
}

const STRIPE_COUNT: usize = 7;
const BACKGROUND_COLS: usize = 10;

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z
            .wrapping_add(0x9e3779b97f4a7c15)
            .wrapping_add(p.wrapping_mul(0xbf58476d1ce4e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

/// One identity's appearance signature.
struct IdentityTexture {
    stripe_colors: [[f64; 3]; STRIPE_COUNT],
    texture_freq: f64,
    texture_phase: f64,
}

impl IdentityTexture {
    fn new(spec_seed: u64, identity: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec_seed, &[1, identity]));
        let mut stripe_colors = [[0.0; 3]; STRIPE_COUNT];
        for color in stripe_colors.iter_mut() {
            for c in color.iter_mut() {
                *c = rng.gen_range(30.0..226.0);
            }
        }
        IdentityTexture {
            stripe_colors,
            texture_freq: rng.gen_range(2.0..6.0),
            texture_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let h = IMAGE_HEIGHT as usize;
        let stripe = (row * STRIPE_COUNT / h).min(STRIPE_COUNT - 1);
        let t = self.texture_phase
            + std::f64::consts::TAU * self.texture_freq * col as f64 / IMAGE_WIDTH as f64;
        let shade = 0.85 + 0.15 * t.sin();
        let base = self.stripe_colors[stripe];
        [base[0] * shade, base[1] * shade, base[2] * shade]
    }
}

/// Renders one shot of one identity for one camera.
fn render_shot(
    texture: &IdentityTexture,
    camera_b: bool,
    spec: &SyntheticSpec,
    shot_seed: u64,
) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(shot_seed);
    let (w, h) = (IMAGE_WIDTH as usize, IMAGE_HEIGHT as usize);
    let mut img = RgbImage::new(IMAGE_WIDTH, IMAGE_HEIGHT);
    for r in 0..h {
        for c in 0..w {
            let background = c < BACKGROUND_COLS || c >= w - BACKGROUND_COLS;
            let mut px = if background {
                let g = rng.gen_range(40.0..216.0);
                [g, g, g]
            } else {
                texture.pixel(r, c)
            };
            if camera_b && !background {
                for ch in 0..3 {
                    px[ch] = px[ch] * spec.gain[ch] + spec.offset[ch];
                }
            }
            if spec.noise > 0.0 {
                for v in px.iter_mut() {
                    *v += spec.noise * standard_normal(&mut rng);
                }
            }
            let px = [
                px[0].round().clamp(0.0, 255.0) as u8,
                px[1].round().clamp(0.0, 255.0) as u8,
                px[2].round().clamp(0.0, 255.0) as u8,
            ];
            img.put_pixel(c as u32, r as u32, image::Rgb(px));
        }
    }
    img
}

/// What the generator wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthReport {
    pub image_count: usize,
    pub identity_count: usize,
    pub distractor_count: usize,
}

/// Generates the dataset under `root` (`cam_a/` and `cam_b/` are created).
pub fn generate(spec: &SyntheticSpec, root: &Path) -> Result<SynthReport> {
    spec.validate()?;
    let cam_a = root.join("cam_a");
    let cam_b = root.join("cam_b");
    std::fs::create_dir_all(&cam_a).map_err(|e| Error::io(&cam_a, e))?;
    std::fs::create_dir_all(&cam_b).map_err(|e| Error::io(&cam_b, e))?;

    let mut image_count = 0;
    for i in 0..spec.identity_count + spec.distractor_count {
        let distractor = i >= spec.identity_count;
        let texture = IdentityTexture::new(spec.seed, i as u64);
        let person_id = if distractor {
            format!("d{i:04}")
        } else {
            format!("{i:04}")
        };
        for shot in 0..spec.shots_per_camera {
            for (cam_idx, dir) in [(0u64, &cam_a), (1u64, &cam_b)] {
                if distractor && cam_idx == 0 {
                    continue;
                }
                let shot_seed = mix_seed(spec.seed, &[2, i as u64, cam_idx, shot as u64]);
                let img = render_shot(&texture, cam_idx == 1, spec, shot_seed);
                let path = dir.join(format!("{person_id}_{shot:02}.png"));
                img.save(&path).map_err(|e| Error::Decode {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                image_count += 1;
            }
        }
    }
    Ok(SynthReport {
        image_count,
        identity_count: spec.identity_count,
        distractor_count: spec.distractor_count,
    })
}
