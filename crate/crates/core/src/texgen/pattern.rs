use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imagecore::{resize_bilinear, to_grayscale, Image};

/// Side length of the canvas every extracted pattern lives on.
pub const PATTERN_SIZE: usize = 100;

/// Default cut-off below which pattern magnitudes count as background.
pub const DEFAULT_MASK_THRESHOLD: f32 = 0.1;

/// Single-channel texture magnitude map on a square canvas, values in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexturePattern {
    size: usize,
    data: Vec<f32>,
}

impl TexturePattern {
    /// Wraps a square canvas. Values must lie in `[0,1]`; an all-zero canvas
    /// is accepted here and rejected by [`TexturePattern::ensure_usable`].
    pub fn from_canvas(size: usize, data: Vec<f32>) -> Result<Self> {
        if size == 0 || data.len() != size * size {
            return invalid(format!(
                "pattern canvas must be {size}x{size}, got {} values",
                data.len()
            ));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("pattern values must lie in [0,1]");
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.size + x]
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn ensure_usable(self) -> Result<Self> {
        if self.max_value() > 0.0 {
            Ok(self)
        } else {
            Err(Error::DegeneratePattern("pattern has no nonzero values".into()))
        }
    }

    /// Binary tile mask: `true` where the magnitude reaches `threshold`.
    pub fn mask(&self, threshold: f32) -> Vec<bool> {
        self.data.iter().map(|&v| v >= threshold).collect()
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.size, self.size, 1, self.data.clone()).expect("pattern values are in range")
    }
}

/// Separates a texture from its plain background: resize to the pattern
/// canvas, take luma, subtract the median as the background level, take the
/// magnitude, normalize by the maximum and zero out everything below
/// `threshold`.
pub fn extract_texture_pattern(texture_img: &Image, threshold: f32) -> Result<TexturePattern> {
    if !(0.0..1.0).contains(&threshold) {
        return invalid(format!("threshold {threshold} must lie in [0,1)"));
    }
    let small = resize_bilinear(texture_img, PATTERN_SIZE, PATTERN_SIZE)?;
    let gray = to_grayscale(&small)?;
    let values = gray.data();

    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (f64::from(sorted[mid - 1]) + f64::from(sorted[mid])) / 2.0
    } else {
        f64::from(sorted[mid])
    };

    let dev: Vec<f64> = values.iter().map(|&v| (f64::from(v) - median).abs()).collect();
    let max = dev.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::DegeneratePattern(
            "texture image is constant; nothing to extract".into(),
        ));
    }
    let data = dev
        .into_iter()
        .map(|d| {
            let v = (d / max) as f32;
            if v < threshold {
                0.0
            } else {
                v.min(1.0)
            }
        })
        .collect();
    TexturePattern::from_canvas(PATTERN_SIZE, data)
}
