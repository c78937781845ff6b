//! Spatial variation of texture patterns: scaling, shearing, rotation and
//! block-wise free-form shuffling.
//!
//! Linear warps are inverse-mapped: every output pixel `p'` reads the input
//! at `A⁻¹(p' − c) + c` with bilinear interpolation. Reads that fall off the
//! canvas wrap around periodically, so a warped pattern still tiles
//! seamlessly.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pattern::TexturePattern;
use crate::error::{invalid, Result};

pub const FREEFORM_BLOCK_SIZES: [usize; 5] = [3, 5, 7, 9, 11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShearAxis {
    X,
    Y,
}

/// A concrete spatial transform together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformParams {
    Scale { s1: f64, s2: f64 },
    ShearX { k: f64 },
    ShearY { k: f64 },
    Rotate { theta: f64 },
    Freeform { f: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Scale,
    ShearX,
    ShearY,
    Rotate,
    Freeform,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Scale,
        TransformKind::ShearX,
        TransformKind::ShearY,
        TransformKind::Rotate,
        TransformKind::Freeform,
    ];
}

impl TransformParams {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformParams::Scale { .. } => TransformKind::Scale,
            TransformParams::ShearX { .. } => TransformKind::ShearX,
            TransformParams::ShearY { .. } => TransformKind::ShearY,
            TransformParams::Rotate { .. } => TransformKind::Rotate,
            TransformParams::Freeform { .. } => TransformKind::Freeform,
        }
    }

    pub fn apply(&self, p: &TexturePattern) -> Result<TexturePattern> {
        match *self {
            TransformParams::Scale { s1, s2 } => transform_scale(p, s1, s2),
            TransformParams::ShearX { k } => transform_shear(p, k, ShearAxis::X),
            TransformParams::ShearY { k } => transform_shear(p, k, ShearAxis::Y),
            TransformParams::Rotate { theta } => transform_rotate(p, theta),
            TransformParams::Freeform { f, seed } => freeform_distort(p, f, seed),
        }
    }
}

/// Warps `p` by the forward map `p' = A (p − center) + center`.
pub fn warp_linear(p: &TexturePattern, a: [[f64; 2]; 2], center: (f64, f64)) -> Result<TexturePattern> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-12 || !det.is_finite() {
        return invalid("warp matrix is singular");
    }
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let n = p.size();
    let (cx, cy) = center;
    let mut out = Vec::with_capacity(n * n);
    for yo in 0..n {
        for xo in 0..n {
            let dx = xo as f64 - cx;
            let dy = yo as f64 - cy;
            let xs = inv[0][0] * dx + inv[0][1] * dy + cx;
            let ys = inv[1][0] * dx + inv[1][1] * dy + cy;
            out.push(sample_periodic(p, xs, ys).clamp(0.0, 1.0) as f32);
        }
    }
    TexturePattern::from_canvas(n, out)
}

fn sample_periodic(p: &TexturePattern, x: f64, y: f64) -> f64 {
    let n = p.size() as i64;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let wrap = |i: i64| i.rem_euclid(n) as usize;
    let (xa, xb) = (wrap(x0 as i64), wrap(x0 as i64 + 1));
    let (ya, yb) = (wrap(y0 as i64), wrap(y0 as i64 + 1));
    let v = |yy: usize, xx: usize| f64::from(p.get(yy, xx));
    let top = v(ya, xa) * (1.0 - fx) + v(ya, xb) * fx;
    let bot = v(yb, xa) * (1.0 - fx) + v(yb, xb) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Axis-aligned magnification `x' = s1·x`, `y' = s2·y` about the canvas origin.
pub fn transform_scale(p: &TexturePattern, s1: f64, s2: f64) -> Result<TexturePattern> {
    for s in [s1, s2] {
        if !(s > 1.0 && s <= 3.0) {
            return invalid(format!("scale factor {s} outside (1,3]"));
        }
    }
    warp_linear(p, [[s1, 0.0], [0.0, s2]], (0.0, 0.0))
}

/// Shear about the canvas origin: `x' = x + k·y` (X) or `y' = y + k·x` (Y).
pub fn transform_shear(p: &TexturePattern, k: f64, axis: ShearAxis) -> Result<TexturePattern> {
    if !(0.0..=1.0).contains(&k) {
        return invalid(format!("shear factor {k} outside [0,1]"));
    }
    let a = match axis {
        ShearAxis::X => [[1.0, k], [0.0, 1.0]],
        ShearAxis::Y => [[1.0, 0.0], [k, 1.0]],
    };
    warp_linear(p, a, (0.0, 0.0))
}

/// Rotation about the canvas center with `x' = cosθ·x + sinθ·y`,
/// `y' = −sinθ·x + cosθ·y` on center-relative coordinates.
pub fn transform_rotate(p: &TexturePattern, theta: f64) -> Result<TexturePattern> {
    if !(-PI..=PI).contains(&theta) {
        return invalid(format!("rotation angle {theta} outside [-pi, pi]"));
    }
    let (s, c) = theta.sin_cos();
    let mid = (p.size() as f64 - 1.0) / 2.0;
    warp_linear(p, [[c, s], [-s, c]], (mid, mid))
}

/// Shuffles pixel values inside each non-overlapping `f×f` block (blocks on
/// the right and bottom edges may be smaller).
pub fn freeform_distort(p: &TexturePattern, f: usize, seed: u64) -> Result<TexturePattern> {
    if !FREEFORM_BLOCK_SIZES.contains(&f) {
        return invalid(format!("free-form block size {f} not in {{3,5,7,9,11}}"));
    }
    let n = p.size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = p.data().to_vec();
    let mut idx = Vec::with_capacity(f * f);
    let mut vals = Vec::with_capacity(f * f);
    for by in (0..n).step_by(f) {
        for bx in (0..n).step_by(f) {
            idx.clear();
            for y in by..(by + f).min(n) {
                for x in bx..(bx + f).min(n) {
                    idx.push(y * n + x);
                }
            }
            vals.clear();
            vals.extend(idx.iter().map(|&i| p.data()[i]));
            vals.shuffle(&mut rng);
            for (&i, &v) in idx.iter().zip(&vals) {
                out[i] = v;
            }
        }
    }
    TexturePattern::from_canvas(n, out)
}

/// Draws one transform kind uniformly, then in-range parameters for it.
pub fn sample_transform<R: Rng + ?Sized>(rng: &mut R) -> TransformParams {
    // 3 - 2u with u in [0,1) lands in (1,3]
    let scale = |rng: &mut R| 3.0 - 2.0 * rng.gen::<f64>();
    match rng.gen_range(0..5) {
        0 => TransformParams::Scale {
            s1: scale(rng),
            s2: scale(rng),
        },
        1 => TransformParams::ShearX {
            k: rng.gen_range(0.0..=1.0),
        },
        2 => TransformParams::ShearY {
            k: rng.gen_range(0.0..=1.0),
        },
        3 => TransformParams::Rotate {
            theta: rng.gen_range(-PI..=PI),
        },
        _ => TransformParams::Freeform {
            f: *FREEFORM_BLOCK_SIZES.choose(rng).expect("non-empty"),
            seed: rng.gen(),
        },
    }
}

/// Applies a randomly drawn transform. Fails with a degenerate-pattern error
/// if the input is unusable or the warp leaves nothing above zero.
pub fn random_transform<R: Rng + ?Sized>(p: &TexturePattern, rng: &mut R) -> Result<(TexturePattern, TransformParams)> {
    let p = p.clone().ensure_usable()?;
    let params = sample_transform(rng);
    let out = params.apply(&p)?.ensure_usable()?;
    Ok((out, params))
}
