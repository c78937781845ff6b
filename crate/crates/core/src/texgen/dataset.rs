//! On-disk dataset layout:
//!
//! ```text
//! input/NNNNNN.png       blended input, 16-bit RGB
//! structure/NNNNNN.png   structure-only ground truth, 16-bit RGB
//! texture_gt/NNNNNN.png  texture confidence, 16-bit gray
//! mask/NNNNNN.png        binary texture mask, 8-bit gray
//! edge_gt/NNNNNN.png     binary structure map, 8-bit gray
//! manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_sample, GenConfig, GeneratedSample, GtMode, TexturePattern, TransformParams};
use crate::error::{invalid, Error, Result};
use crate::imagecore::{read_png, write_png, BitDepth, Image};
use crate::par;

pub const SUBDIRS: [&str; 5] = ["input", "structure", "texture_gt", "mask", "edge_gt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub pattern_id: usize,
    pub structure_id: usize,
    pub transforms: Vec<TransformParams>,
    pub kappa: f32,
    pub gt_mode: GtMode,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub seed: u64,
    pub config: GenConfig,
    /// Source file names (or labels) indexed by `pattern_id`.
    pub patterns: Vec<String>,
    /// Source file names (or labels) indexed by `structure_id`.
    pub structures: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.samples
            .iter()
            .filter(move |s| s.split == split)
            .map(|s| s.id.as_str())
    }
}

/// `(train, val, test)` counts at 65/10/25. Validation and test round down;
/// the remainder goes to training.
pub fn split_counts(count: usize) -> (usize, usize, usize) {
    let val = count / 10;
    let test = count / 4;
    (count - val - test, val, test)
}

/// Seeded assignment of sample indices to splits.
pub fn assign_splits(count: usize, seed: u64) -> Vec<Split> {
    let (train, val, _) = split_counts(count);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0053_504c_4954));
    let mut out = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// SplitMix64 finalizer; decorrelates per-sample seeds from the run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `count` samples. Sample `i` depends only on
/// `(structures, pool, derive_seed(seed, i))`, so the output does not depend
/// on how the work is spread over threads.
pub fn generate_dataset(
    structures: &[Image],
    pool: &[TexturePattern],
    count: usize,
    seed: u64,
    cfg: &GenConfig,
) -> Result<Vec<(GeneratedSample, usize)>> {
    if structures.is_empty() {
        return invalid("no structure images");
    }
    if count == 0 {
        return invalid("count must be >= 1");
    }
    par::map_indexed(count, |i| {
        let sample_seed = derive_seed(seed, i as u64);
        let structure_id = ChaCha8Rng::seed_from_u64(sample_seed ^ 0xA5A5_A5A5).gen_range(0..structures.len());
        generate_sample(&structures[structure_id], pool, sample_seed, cfg).map(|s| (s, structure_id))
    })
    .into_iter()
    .collect()
}

/// Generates a dataset and writes it under `root` together with its
/// manifest. Names label the structure and pattern sources in the manifest.
pub fn write_dataset(
    root: &Path,
    structures: &[(String, Image)],
    patterns: &[(String, TexturePattern)],
    count: usize,
    seed: u64,
    cfg: &GenConfig,
) -> Result<Manifest> {
    let images: Vec<Image> = structures.iter().map(|(_, img)| img.clone()).collect();
    let pool: Vec<TexturePattern> = patterns.iter().map(|(_, p)| p.clone()).collect();
    let generated = generate_dataset(&images, &pool, count, seed, cfg)?;
    let splits = assign_splits(count, seed);
    let mut samples = Vec::with_capacity(count);
    for (i, ((s, structure_id), split)) in generated.iter().zip(splits).enumerate() {
        let id = sample_id(i);
        write_sample(root, &id, s)?;
        samples.push(SampleRecord {
            id,
            seed: s.seed,
            pattern_id: s.pattern_id,
            structure_id: *structure_id,
            transforms: s.transforms.clone(),
            kappa: cfg.blend.kappa,
            gt_mode: cfg.blend.gt_mode,
            split,
        });
    }
    let manifest = Manifest {
        count,
        seed,
        config: *cfg,
        patterns: patterns.iter().map(|(n, _)| n.clone()).collect(),
        structures: structures.iter().map(|(n, _)| n.clone()).collect(),
        samples,
    };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

pub fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

fn png_path(root: &Path, sub: &str, id: &str) -> PathBuf {
    root.join(sub).join(format!("{id}.png"))
}

pub fn write_sample(root: &Path, id: &str, s: &GeneratedSample) -> Result<()> {
    for sub in SUBDIRS {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_png(&s.input, png_path(root, "input", id), BitDepth::Sixteen)?;
    write_png(&s.structure_only, png_path(root, "structure", id), BitDepth::Sixteen)?;
    write_png(&s.texture_gt, png_path(root, "texture_gt", id), BitDepth::Sixteen)?;
    write_png(&s.texture_mask, png_path(root, "mask", id), BitDepth::Eight)?;
    write_png(&s.structure_map, png_path(root, "edge_gt", id), BitDepth::Eight)?;
    Ok(())
}

pub fn write_manifest(root: &Path, m: &Manifest) -> Result<()> {
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(m)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads every sample of one split from a dataset directory.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<GeneratedSample>> {
    let manifest = read_manifest(root)?;
    manifest
        .samples
        .iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let id = r.id.as_str();
            Ok(GeneratedSample {
                input: read_png(png_path(root, "input", id))?,
                structure_only: read_png(png_path(root, "structure", id))?,
                texture_gt: read_png(png_path(root, "texture_gt", id))?,
                texture_mask: read_png(png_path(root, "mask", id))?,
                structure_map: read_png(png_path(root, "edge_gt", id))?,
                seed: r.seed,
                pattern_id: r.pattern_id,
                transforms: r.transforms.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    #[test]
    fn split_rule_examples() {
        assert_eq!(split_counts(12), (8, 1, 3));
        assert_eq!(split_counts(100), (65, 10, 25));
        assert_eq!(split_counts(1), (1, 0, 0));
        let s = assign_splits(12, 7);
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 8);
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 1);
        assert_eq!(s, assign_splits(12, 7));
    }

    #[test]
    fn dataset_generation_is_seed_determined() {
        let structures: Vec<Image> = (0..3).map(|i| toy::structure_image(i, 64, 64)).collect();
        let pool = toy::pattern_pool(3);
        let cfg = GenConfig::default();
        let a = generate_dataset(&structures, &pool, 5, 11, &cfg).unwrap();
        let b = generate_dataset(&structures, &pool, 5, 11, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(generate_dataset(&structures, &pool, 0, 11, &cfg).is_err());
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = toy::dataset(2, 64, 3).unwrap();
        let mut records = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let id = sample_id(i);
            write_sample(dir.path(), &id, s).unwrap();
            records.push(SampleRecord {
                id,
                seed: s.seed,
                pattern_id: s.pattern_id,
                structure_id: i,
                transforms: s.transforms.clone(),
                kappa: 0.75,
                gt_mode: GtMode::Remapped,
                split: Split::Train,
            });
        }
        let m = Manifest {
            count: 2,
            seed: 3,
            config: GenConfig::default(),
            patterns: vec![],
            structures: vec![],
            samples: records,
        };
        write_manifest(dir.path(), &m).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        let loaded = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].structure_only, samples[0].structure_only);
        assert_eq!(loaded[0].texture_mask, samples[0].texture_mask);
        assert_eq!(loaded[0].structure_map, samples[0].structure_map);
        for (a, b) in loaded[1].input.data().iter().zip(samples[1].input.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
