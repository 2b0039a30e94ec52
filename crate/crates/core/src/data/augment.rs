use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::GrayImage;

/// Colour jitter and additive noise magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PixelAugment {
    pub enabled: bool,
    pub jitter_strength: f64,
    pub noise_sigma: f64,
}

impl Default for PixelAugment {
    fn default() -> Self {
        Self {
            enabled: true,
            jitter_strength: 0.2,
            noise_sigma: 0.02,
        }
    }
}

impl PixelAugment {
    pub fn off() -> Self {
        Self {
            enabled: false,
            jitter_strength: 0.0,
            noise_sigma: 0.0,
        }
    }
}

/// Brightness/contrast jitter drawn from `±jitter_strength`, then Gaussian
/// noise, clamped to `[0, 1]`. Geometry is untouched.
pub fn pixel_augment<R: Rng + ?Sized>(
    image: &GrayImage,
    rng: &mut R,
    jitter_strength: f64,
    noise_sigma: f64,
) -> GrayImage {
    let (brightness, contrast) = if jitter_strength > 0.0 {
        (
            rng.random_range(-jitter_strength..=jitter_strength) as f32,
            rng.random_range(-jitter_strength..=jitter_strength) as f32,
        )
    } else {
        (0.0, 0.0)
    };
    let noise =
        (noise_sigma > 0.0).then(|| Normal::new(0.0f32, noise_sigma as f32).expect("sigma > 0"));
    let pixels = image
        .pixels
        .iter()
        .map(|&v| {
            let mut out = (v - 0.5) * (1.0 + contrast) + 0.5 + brightness;
            if let Some(n) = &noise {
                out += n.sample(rng);
            }
            out.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage {
        width: image.width,
        height: image.height,
        pixels,
    }
}
