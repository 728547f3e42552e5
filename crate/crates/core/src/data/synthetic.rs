//! Seeded synthetic small-object images.
//!
//! Each image is mid-gray uniform noise with filled squares and discs
//! painted on top. An object's colour depends on its class only, so the
//! class is recoverable from local appearance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub image_size: usize,
    pub min_obj_size: usize,
    pub max_obj_size: usize,
    pub n_classes: usize,
    pub objects_per_image: usize,
    /// Standard deviation of the uniform background and object noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_images: 1000,
            image_size: 64,
            min_obj_size: 4,
            max_obj_size: 8,
            n_classes: 3,
            objects_per_image: 1,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return bad(format!("image_size must be a positive multiple of 16, got {}", self.image_size));
        }
        if self.min_obj_size == 0 || self.min_obj_size > self.max_obj_size {
            return bad(format!("need 0 < min_obj_size <= max_obj_size, got {} and {}", self.min_obj_size, self.max_obj_size));
        }
        if self.max_obj_size * 8 > self.image_size {
            return bad(format!("max_obj_size {} exceeds image_size / 8", self.max_obj_size));
        }
        if self.n_classes == 0 || self.n_classes > 7 {
            return bad(format!("n_classes must be in 1..=7, got {}", self.n_classes));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and non-negative, got {}", self.noise_std));
        }
        Ok(())
    }
}

/// Object centre and side length in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub cx: f64,
    pub cy: f64,
    pub size: usize,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `[3, H, W]`.
    pub image: Tensor<f64>,
    pub targets: Vec<Target>,
}

/// RGB of a class: the bits of `class + 1` pick the saturated channels.
pub fn class_colour(class: usize) -> [f64; 3] {
    let bits = class + 1;
    [0, 1, 2].map(|c| if bits >> c & 1 == 1 { 1.0 } else { 0.0 })
}

/// Per-item seed so samples can be generated independently.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<SyntheticSample>> {
    config.validate()?;
    (0..config.n_images).into_par_iter().map(|i| generate_one(config, item_seed(config.seed, i))).collect()
}

fn generate_one(config: &SyntheticConfig, seed: u64) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = config.image_size;
    // Uniform on [-a, a] has standard deviation a / sqrt(3).
    let half = config.noise_std * 3f64.sqrt();
    let noise = |rng: &mut ChaCha8Rng| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let mut data: Vec<f64> = (0..3 * s * s).map(|_| 0.5 + noise(&mut rng)).collect();
    let mut targets = Vec::with_capacity(config.objects_per_image);
    for _ in 0..config.objects_per_image {
        let size = rng.random_range(config.min_obj_size..=config.max_obj_size);
        let class = rng.random_range(0..config.n_classes);
        let x0 = rng.random_range(0..=s - size);
        let y0 = rng.random_range(0..=s - size);
        let disc = rng.random_bool(0.5);
        let colour = class_colour(class);
        let (cx, cy) = (x0 as f64 + size as f64 / 2.0, y0 as f64 + size as f64 / 2.0);
        let r2 = (size as f64 / 2.0).powi(2);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                if disc && (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) > r2 {
                    continue;
                }
                for (c, &v) in colour.iter().enumerate() {
                    data[(c * s + y) * s + x] = v + noise(&mut rng);
                }
            }
        }
        targets.push(Target { cx, cy, size, class });
    }
    Ok(SyntheticSample { image: Tensor::new(&[3, s, s], data)?, targets })
}
