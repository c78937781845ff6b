//! Procedural stand-ins for the cartoon and texture photo collections:
//! flat-colored shape compositions as structure-only images and simple
//! textures on plain backgrounds. Everything is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imagecore::Image;
use crate::par;
use crate::texgen::{
    extract_texture_pattern, generate_sample, GenConfig, GeneratedSample, TexturePattern, DEFAULT_MASK_THRESHOLD,
    PATTERN_SIZE,
};

fn color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    // quantized to 8 bits so structure images survive a PNG round trip
    [0; 3].map(|_: i32| f32::from(rng.gen::<u8>()) / 255.0)
}

/// Cartoon-like RGB image: a flat background with a handful of flat-filled
/// rectangles and ellipses.
pub fn structure_image(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5354_5255_4354);
    let (hf, wf) = (height as f32, width as f32);
    let mut canvas: Vec<[f32; 3]> = vec![color(&mut rng); height * width];
    let shapes = rng.gen_range(3..7);
    for _ in 0..shapes {
        let fill = color(&mut rng);
        let cy = rng.gen_range(0.0..hf);
        let cx = rng.gen_range(0.0..wf);
        let ry = rng.gen_range(0.12..0.4) * hf;
        let rx = rng.gen_range(0.12..0.4) * wf;
        let ellipse = rng.gen_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f32 + 0.5 - cy) / ry;
                let dx = (x as f32 + 0.5 - cx) / rx;
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    canvas[y * width + x] = fill;
                }
            }
        }
    }
    Image::new(height, width, 3, canvas.into_iter().flatten().collect()).expect("colors are in range")
}

/// Texture photo stand-in: sparse marks of one color on a plain background.
/// Marks cover well under half the area so the median is the background.
pub fn texture_source(seed: u64, size: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5445_5854);
    let bg: f32 = rng.gen_range(0.05..0.35);
    let fg: f32 = rng.gen_range(0.65..0.95);
    let (bg, fg) = if rng.gen_bool(0.5) { (bg, fg) } else { (fg, bg) };
    let period = rng.gen_range(4..8) as f32;
    let duty = rng.gen_range(0.12..0.22);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let kind = seed % 4;
    let (sa, ca) = angle.sin_cos();
    Image::from_fn(size, size, 3, |y, x, c| {
        let (yf, xf) = (y as f32, x as f32);
        let frac = |v: f32| v.rem_euclid(period) / period;
        let mark = match kind {
            // stripes
            0 => frac(xf * ca + yf * sa) < duty,
            // dots
            1 => {
                let dy = frac(yf) - 0.5;
                let dx = frac(xf) - 0.5;
                dx * dx + dy * dy < duty * duty
            }
            // crosshatch
            2 => (frac(xf * ca + yf * sa) < duty * 0.6) || (frac(-xf * sa + yf * ca) < duty * 0.6),
            // wavy lines
            _ => frac(yf + 0.3 * period * (xf * std::f32::consts::TAU / (2.0 * period)).sin()) < duty,
        };
        let v = if mark { fg } else { bg };
        v * (0.95 + 0.05 * c as f32)
    })
    .expect("values are in range")
}

/// Extracted patterns from `count` procedural texture sources rendered at
/// canvas size.
pub fn pattern_pool(count: usize) -> Vec<TexturePattern> {
    (0..count as u64)
        .map(|i| {
            extract_texture_pattern(&texture_source(i, PATTERN_SIZE), DEFAULT_MASK_THRESHOLD)
                .expect("procedural textures are never constant")
        })
        .collect()
}

/// `count` generated samples of `size×size`, sample `i` seeded by `seed + i`.
pub fn dataset(count: usize, size: usize, seed: u64) -> Result<Vec<GeneratedSample>> {
    let pool = pattern_pool(8);
    let cfg = GenConfig::default();
    par::map_indexed(count, |i| {
        let sample_seed = seed.wrapping_add(i as u64);
        let s = structure_image(sample_seed, size, size);
        generate_sample(&s, &pool, sample_seed, &cfg)
    })
    .into_iter()
    .collect()
}
