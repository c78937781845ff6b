//! Training data generation: texture patterns are extracted from plain
//! background texture photos, spatially warped, tiled into a binary mask and
//! blended with randomized colors onto structure-only images. Every sample
//! carries its exact ground truth.

mod blend;
pub mod dataset;
mod pattern;
mod warp;

pub use blend::{blend, blend_with_mask, structure_gt, texture_gt, BlendConfig, GtMode, EDGE_THRESHOLD};
pub use pattern::{extract_texture_pattern, TexturePattern, DEFAULT_MASK_THRESHOLD, PATTERN_SIZE};
pub use warp::{
    freeform_distort, random_transform, sample_transform, transform_rotate, transform_scale, transform_shear,
    warp_linear, ShearAxis, TransformKind, TransformParams, FREEFORM_BLOCK_SIZES,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imagecore::Image;

/// Whether one transformed pattern covers the whole image or every tile
/// draws its own transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerImage,
    PerTile,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(flatten)]
    pub blend: BlendConfig,
    #[serde(default)]
    pub granularity: Granularity,
}

/// One generated training sample and everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    /// Blended input `I`.
    pub input: Image,
    /// Structure-only ground truth `S`.
    pub structure_only: Image,
    /// Texture confidence ground truth `T*`.
    pub texture_gt: Image,
    /// Binary texture mask `M`.
    pub texture_mask: Image,
    /// Binary structure (edge) map `E*`.
    pub structure_map: Image,
    pub seed: u64,
    pub pattern_id: usize,
    /// Transforms in tile order (a single entry for per-image granularity).
    pub transforms: Vec<TransformParams>,
}

/// Attempts at drawing a transform before giving up on a pattern whose warps
/// keep coming out empty.
const TRANSFORM_ATTEMPTS: usize = 8;

fn transformed<R: Rng + ?Sized>(p: &TexturePattern, rng: &mut R) -> Result<(TexturePattern, TransformParams)> {
    let mut last = None;
    for _ in 0..TRANSFORM_ATTEMPTS {
        match random_transform(p, rng) {
            Ok(v) => return Ok(v),
            Err(e @ Error::DegeneratePattern(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Generates one sample; a pure function of `(s, pool, seed, cfg)`.
pub fn generate_sample(s: &Image, pool: &[TexturePattern], seed: u64, cfg: &GenConfig) -> Result<GeneratedSample> {
    if pool.is_empty() {
        return invalid("texture pattern pool is empty");
    }
    cfg.blend.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern_id = rng.gen_range(0..pool.len());
    let base = &pool[pattern_id];

    let (input, mask, transforms) = match cfg.granularity {
        Granularity::PerImage => {
            let (p, t) = transformed(base, &mut rng)?;
            let (input, mask) = blend(s, &p, &cfg.blend, &mut rng)?;
            (input, mask, vec![t])
        }
        Granularity::PerTile => {
            let n = base.size();
            let tiles_y = s.height().div_ceil(n);
            let tiles_x = s.width().div_ceil(n);
            let mut masks = Vec::with_capacity(tiles_y * tiles_x);
            let mut transforms = Vec::with_capacity(tiles_y * tiles_x);
            for _ in 0..tiles_y * tiles_x {
                let (p, t) = transformed(base, &mut rng)?;
                masks.push(p.mask(cfg.blend.mask_threshold));
                transforms.push(t);
            }
            let (input, mask) = blend_with_mask(s, cfg.blend.kappa, &mut rng, |y, x| {
                masks[(y / n) * tiles_x + x / n][(y % n) * n + x % n]
            })?;
            (input, mask, transforms)
        }
    };

    let texture = texture_gt(&input, s, cfg.blend.gt_mode)?;
    let edges = structure_gt(s)?;
    Ok(GeneratedSample {
        input,
        structure_only: s.clone(),
        texture_gt: texture,
        texture_mask: mask,
        structure_map: edges,
        seed,
        pattern_id,
        transforms,
    })
}

impl GeneratedSample {
    /// Crops every image of the sample to the same window.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<GeneratedSample> {
        Ok(GeneratedSample {
            input: self.input.crop(y, x, h, w)?,
            structure_only: self.structure_only.crop(y, x, h, w)?,
            texture_gt: self.texture_gt.crop(y, x, h, w)?,
            texture_mask: self.texture_mask.crop(y, x, h, w)?,
            structure_map: self.structure_map.crop(y, x, h, w)?,
            ..self.clone()
        })
    }
}
