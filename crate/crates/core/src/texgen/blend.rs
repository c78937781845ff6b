use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagecore::{to_grayscale, Image};

/// How the texture-confidence ground truth is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtMode {
    /// `σ(d)`: texture-free pixels score 0.5.
    Literal,
    /// `2·(σ(d) − 0.5)`: texture-free pixels score exactly 0.
    #[default]
    Remapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    /// Lower bound coefficient of the random interval `[κ(1−S), 1−S]`.
    pub kappa: f32,
    /// Pattern magnitude at or above which a pixel is texture.
    pub mask_threshold: f32,
    pub gt_mode: GtMode,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            kappa: 0.75,
            mask_threshold: super::DEFAULT_MASK_THRESHOLD,
            gt_mode: GtMode::Remapped,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return invalid(format!("kappa {} must lie in (0,1)", self.kappa));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return invalid(format!("mask threshold {} must lie in (0,1)", self.mask_threshold));
        }
        Ok(())
    }
}

/// Blends texture onto a structure-only RGB image. `is_texture(y, x)` is the
/// tiled binary mask. Returns the blended image and the mask as a 0/1 image.
///
/// Off-mask pixels copy `S` exactly; on-mask channels are drawn uniformly
/// from `[κ(1−S), 1−S]`.
pub fn blend_with_mask<R: Rng + ?Sized>(
    s: &Image,
    kappa: f32,
    rng: &mut R,
    mut is_texture: impl FnMut(usize, usize) -> bool,
) -> Result<(Image, Image)> {
    if s.channels() != 3 {
        return invalid(format!("structure image must be RGB, got {} channels", s.channels()));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return invalid(format!("kappa {kappa} must lie in (0,1)"));
    }
    let (h, w, _) = s.dims();
    let mut out = Vec::with_capacity(h * w * 3);
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let px = s.pixel(y, x);
            if is_texture(y, x) {
                mask.push(1.0);
                for &sv in px {
                    let hi = 1.0 - sv;
                    let lo = kappa * hi;
                    let v: f32 = rng.gen_range(lo..=hi);
                    out.push(v.clamp(lo, hi));
                }
            } else {
                mask.push(0.0);
                out.extend_from_slice(px);
            }
        }
    }
    Ok((Image::new(h, w, 3, out)?, Image::new(h, w, 1, mask)?))
}

/// Tiles one pattern's binary mask over `s` without overlap and blends.
/// Border tiles (and images smaller than one tile) use the pattern's
/// top-left crop.
pub fn blend<R: Rng + ?Sized>(
    s: &Image,
    p: &super::TexturePattern,
    cfg: &BlendConfig,
    rng: &mut R,
) -> Result<(Image, Image)> {
    cfg.validate()?;
    let tile = p.mask(cfg.mask_threshold);
    let n = p.size();
    blend_with_mask(s, cfg.kappa, rng, |y, x| tile[(y % n) * n + x % n])
}

fn logistic(d: f64) -> f64 {
    1.0 / (1.0 + (-d).exp())
}

/// Texture confidence from the mean absolute channel difference `d`:
/// `σ(d)` (literal) or `2σ(d) − 1` (remapped).
pub fn texture_gt(input: &Image, s: &Image, mode: GtMode) -> Result<Image> {
    if !input.same_shape(s) {
        return invalid(format!("texture_gt dims differ: {:?} vs {:?}", input.dims(), s.dims()));
    }
    let c = input.channels();
    let data = input
        .data()
        .chunks_exact(c)
        .zip(s.data().chunks_exact(c))
        .map(|(a, b)| {
            let d = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
                .sum::<f64>()
                / c as f64;
            let v = match mode {
                GtMode::Literal => logistic(d),
                // 2σ(d) − 1 = tanh(d/2), without the cancellation near d = 0
                GtMode::Remapped => (d / 2.0).tanh(),
            };
            v as f32
        })
        .collect();
    Image::new(input.height(), input.width(), 1, data)
}

/// Edge threshold on the unit-step-normalized Sobel magnitude.
pub const EDGE_THRESHOLD: f64 = 0.1;

/// Binary edge map: Sobel magnitude of the luma (normalized so a unit step
/// responds with 1, borders replicated), thresholded at [`EDGE_THRESHOLD`].
pub fn structure_gt(s: &Image) -> Result<Image> {
    let g = to_grayscale(s)?;
    let (h, w, _) = g.dims();
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        f64::from(g.get(yy, xx, 0))
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let mag = (gx * gx + gy * gy).sqrt() / 4.0;
            out.push(if mag >= EDGE_THRESHOLD { 1.0 } else { 0.0 });
        }
    }
    Image::new(h, w, 1, out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::texgen::{TexturePattern, PATTERN_SIZE};

    fn full_pattern(v: f32) -> TexturePattern {
        TexturePattern::from_canvas(PATTERN_SIZE, vec![v; PATTERN_SIZE * PATTERN_SIZE]).unwrap()
    }

    #[test]
    fn empty_pattern_leaves_image_untouched() {
        let s = Image::from_fn(120, 130, 3, |y, x, c| ((y + x + c) % 17) as f32 / 16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (i, m) = blend(&s, &full_pattern(0.0), &BlendConfig::default(), &mut rng).unwrap();
        assert_eq!(i, s);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn black_structure_blends_into_upper_quarter() {
        let s = Image::filled(100, 100, 3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (i, m) = blend(&s, &full_pattern(1.0), &BlendConfig::default(), &mut rng).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        assert!(i.data().iter().all(|&v| (0.75..=1.0).contains(&v)));
    }

    #[test]
    fn white_structure_collapses_to_zero() {
        let s = Image::filled(100, 100, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (i, _) = blend(&s, &full_pattern(1.0), &BlendConfig::default(), &mut rng).unwrap();
        assert!(i.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mask_tiles_without_overlap() {
        let n = PATTERN_SIZE;
        let mut data = vec![0.0; n * n];
        data[0] = 1.0;
        data[n * n - 1] = 1.0;
        let p = TexturePattern::from_canvas(n, data).unwrap();
        let s = Image::filled(150, 210, 3, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, m) = blend(&s, &p, &BlendConfig::default(), &mut rng).unwrap();
        let ones: Vec<(usize, usize)> = (0..150)
            .flat_map(|y| (0..210).map(move |x| (y, x)))
            .filter(|&(y, x)| m.get(y, x, 0) == 1.0)
            .collect();
        assert_eq!(
            ones,
            vec![
                (0, 0),
                (0, 100),
                (0, 200),
                (99, 99),
                (99, 199),
                (100, 0),
                (100, 100),
                (100, 200)
            ]
        );
    }

    #[test]
    fn blend_rejects_gray_structure_and_bad_kappa() {
        let s = Image::filled(100, 100, 1, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(blend(&s, &full_pattern(1.0), &BlendConfig::default(), &mut rng).is_err());
        let rgb = Image::filled(100, 100, 3, 0.0).unwrap();
        let cfg = BlendConfig {
            kappa: 1.0,
            ..BlendConfig::default()
        };
        assert!(blend(&rgb, &full_pattern(1.0), &cfg, &mut rng).is_err());
    }

    #[test]
    fn texture_gt_zero_difference() {
        let s = Image::filled(3, 3, 3, 0.4).unwrap();
        let lit = texture_gt(&s, &s, GtMode::Literal).unwrap();
        let rem = texture_gt(&s, &s, GtMode::Remapped).unwrap();
        assert!(lit.data().iter().all(|&v| v == 0.5));
        assert!(rem.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn texture_gt_unit_difference() {
        let s = Image::filled(1, 1, 3, 0.0).unwrap();
        let i = Image::filled(1, 1, 3, 1.0).unwrap();
        // 1 / (1 + e^-1)
        let sigma1 = 0.731_058_578_630_004_9_f64;
        let lit = texture_gt(&i, &s, GtMode::Literal).unwrap();
        let rem = texture_gt(&i, &s, GtMode::Remapped).unwrap();
        assert!((f64::from(lit.data()[0]) - sigma1).abs() < 1e-7);
        assert!((f64::from(rem.data()[0]) - 2.0 * (sigma1 - 0.5)).abs() < 1e-7);
        assert!((f64::from(rem.data()[0]) - 0.462_117).abs() < 1e-6);
    }

    #[test]
    fn texture_gt_is_monotone_and_rejects_mismatch() {
        let s = Image::filled(1, 1, 3, 0.0).unwrap();
        let mut prev = -1.0;
        for k in 0..=20 {
            let i = Image::filled(1, 1, 3, k as f32 / 20.0).unwrap();
            let v = texture_gt(&i, &s, GtMode::Remapped).unwrap().data()[0];
            assert!(v >= prev);
            prev = v;
        }
        let other = Image::filled(2, 1, 3, 0.0).unwrap();
        assert!(texture_gt(&other, &s, GtMode::Literal).is_err());
    }

    #[test]
    fn structure_gt_constant_and_step() {
        let flat = Image::filled(6, 6, 3, 0.3).unwrap();
        assert!(structure_gt(&flat).unwrap().data().iter().all(|&v| v == 0.0));

        let step = Image::from_fn(5, 8, 3, |_, x, _| if x >= 4 { 1.0 } else { 0.0 }).unwrap();
        let e = structure_gt(&step).unwrap();
        for y in 0..5 {
            for x in 0..8 {
                let want = if x == 3 || x == 4 { 1.0 } else { 0.0 };
                assert_eq!(e.get(y, x, 0), want, "({y},{x})");
            }
        }
    }
}
