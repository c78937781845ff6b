//! Inference: guidance prediction, guided filtering and detail enhancement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{tsafn_input, SpnModel, TpnModel, TsafnModel};
use crate::error::{invalid, Error, Result};
use crate::imagecore::{image_to_tensor, tensor_to_image, tensor_to_image_clamped, Image, Tensor};

/// Value fed in place of a disabled guidance map.
pub const NEUTRAL_GUIDANCE: f32 = 0.5;

/// Which guidance maps reach the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    StructureOnly,
    TextureOnly,
    #[default]
    Double,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::StructureOnly,
        Ablation::TextureOnly,
        Ablation::Double,
    ];

    pub fn uses_structure(self) -> bool {
        matches!(self, Ablation::StructureOnly | Ablation::Double)
    }

    pub fn uses_texture(self) -> bool {
        matches!(self, Ablation::TextureOnly | Ablation::Double)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::StructureOnly => "structure_only",
            Ablation::TextureOnly => "texture_only",
            Ablation::Double => "double",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation mode '{s}'")))
    }
}

/// The three trained networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub tpn: TpnModel,
    pub spn: SpnModel,
    pub tsafn: TsafnModel,
}

/// Smoothed image together with the guidance maps that were fed to the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub image: Image,
    pub texture: Image,
    pub structure: Image,
}

fn padded_len(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

fn crop_tensor(t: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let (n, c, th, tw) = t.shape();
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in t.data().chunks(th * tw) {
        for row in plane.chunks(tw).take(h) {
            out.extend_from_slice(&row[..w]);
        }
    }
    Tensor::from_vec(n, c, h, w, out).expect("crop shape")
}

/// Predicts `(Ẽ, T̃)` at the image's own size. Disabled maps are filled with
/// [`NEUTRAL_GUIDANCE`] and the corresponding network is not run.
pub fn guidance_maps(
    tpn: &TpnModel,
    spn: &SpnModel,
    img: &Image,
    ablation: Ablation,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (h, w, c) = img.dims();
    if c != 3 {
        return invalid(format!("expected an RGB image, got {c} channels"));
    }
    let m = tpn.config.divisor().max(spn.config.divisor());
    let padded = img.pad_reflect(padded_len(h, m), padded_len(w, m))?;
    let x = image_to_tensor(&[padded])?;
    let edges = if ablation.uses_structure() {
        crop_tensor(&spn.forward(&x)?.fused, h, w)
    } else {
        Tensor::full(1, 1, h, w, NEUTRAL_GUIDANCE)
    };
    let texture = if ablation.uses_texture() {
        crop_tensor(&tpn.forward(&x)?, h, w)
    } else {
        Tensor::full(1, 1, h, w, NEUTRAL_GUIDANCE)
    };
    Ok((edges, texture))
}

/// Runs the full pipeline on one RGB image.
pub fn smooth(img: &Image, models: &Models, ablation: Ablation) -> Result<Smoothed> {
    let (edges, texture) = guidance_maps(&models.tpn, &models.spn, img, ablation)?;
    let x = image_to_tensor(std::slice::from_ref(img))?;
    let out = models.tsafn.forward(&tsafn_input(&x, &edges, &texture)?)?;
    Ok(Smoothed {
        image: tensor_to_image_clamped(&out, 0)?,
        texture: tensor_to_image(&texture, 0)?,
        structure: tensor_to_image(&edges, 0)?,
    })
}

/// `S + α·(I − S)` before clamping, evaluated as `I + (α − 1)·(I − S)` so
/// that `α = 1` returns `I` exactly.
pub fn enhance_raw(input: &Image, smoothed: &Image, alpha: f32) -> Result<Vec<f32>> {
    if !alpha.is_finite() || alpha < 1.0 {
        return invalid(format!("alpha must be >= 1, got {alpha}"));
    }
    if !input.same_shape(smoothed) {
        return invalid("enhance needs matching input and smoothed images");
    }
    Ok(input
        .data()
        .iter()
        .zip(smoothed.data())
        .map(|(&i, &s)| i + (alpha - 1.0) * (i - s))
        .collect())
}

/// Detail enhancement clamped into `[0,1]`.
pub fn enhance(input: &Image, smoothed: &Image, alpha: f32) -> Result<Image> {
    let (h, w, c) = input.dims();
    Image::clamped(h, w, c, enhance_raw(input, smoothed, alpha)?)
}
