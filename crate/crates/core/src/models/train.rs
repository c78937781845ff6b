//! Training loops: separate pre-training of each network and joint fine-tuning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{guidance_maps, Ablation, Models};
use super::{tsafn_input, ModelRole, SpnConfig, SpnModel, TpnConfig, TpnModel, TsafnConfig, TsafnModel, SPN_STAGES};
use crate::error::{invalid, Error, Result};
use crate::imagecore::{image_to_tensor, Tensor};
use crate::nnkernel::{
    combined_finetune_loss, mse_loss, sgd_momentum_step, split_channels, weighted_bce_loss, LossWeights, TrainConfig,
};
use crate::texgen::dataset::derive_seed;
use crate::texgen::GeneratedSample;

/// Seed streams derived from `TrainConfig::seed`.
const STREAM_TPN_INIT: u64 = 1;
const STREAM_SPN_INIT: u64 = 2;
const STREAM_TSAFN_INIT: u64 = 3;

/// Initialization seed of a freshly trained network for run seed `seed`.
pub fn init_seed(role: ModelRole, seed: u64) -> u64 {
    let stream = match role {
        ModelRole::Tpn => STREAM_TPN_INIT,
        ModelRole::Spn => STREAM_SPN_INIT,
        ModelRole::Tsafn => STREAM_TSAFN_INIT,
    };
    derive_seed(seed, stream)
}
const STREAM_PATCHES: u64 = 16;

/// Planar tensors of one training sample.
#[derive(Debug, Clone)]
struct Planes {
    input: Tensor<f32>,
    structure: Tensor<f32>,
    texture_gt: Tensor<f32>,
    edges: Tensor<f32>,
}

/// Samples converted once into the tensor layout the networks consume.
#[derive(Debug, Clone)]
pub struct TrainSet {
    samples: Vec<GeneratedSample>,
    planes: Vec<Planes>,
}

impl TrainSet {
    pub fn new(samples: Vec<GeneratedSample>) -> Result<Self> {
        let planes = samples
            .iter()
            .map(|s| {
                Ok(Planes {
                    input: image_to_tensor(std::slice::from_ref(&s.input))?,
                    structure: image_to_tensor(std::slice::from_ref(&s.structure_only))?,
                    texture_gt: image_to_tensor(std::slice::from_ref(&s.texture_gt))?,
                    edges: image_to_tensor(std::slice::from_ref(&s.structure_map))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, planes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[GeneratedSample] {
        &self.samples
    }

    fn check(&self, patch: usize, divisor: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !patch.is_multiple_of(divisor) {
            return invalid(format!("patch size {patch} must be divisible by {divisor}"));
        }
        if let Some(p) = self.planes.iter().find(|p| p.input.h() < patch || p.input.w() < patch) {
            return invalid(format!(
                "sample of size {}x{} is smaller than patch size {patch}",
                p.input.h(),
                p.input.w()
            ));
        }
        Ok(())
    }
}

/// Loss history of a training run together with the trained model.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Patch {
    index: usize,
    y: usize,
    x: usize,
}

fn plan_batch(rng: &mut ChaCha8Rng, set: &TrainSet, batch: usize, patch: usize) -> Vec<Patch> {
    (0..batch)
        .map(|_| {
            let index = rng.gen_range(0..set.len());
            let t = &set.planes[index].input;
            Patch {
                index,
                y: rng.gen_range(0..=t.h() - patch),
                x: rng.gen_range(0..=t.w() - patch),
            }
        })
        .collect()
}

fn gather<'a>(plan: &[Patch], patch: usize, source: impl Fn(usize) -> &'a Tensor<f32>) -> Tensor<f32> {
    let c = source(plan[0].index).c();
    let mut data = Vec::with_capacity(plan.len() * c * patch * patch);
    for p in plan {
        let t = source(p.index);
        let (h, w) = (t.h(), t.w());
        for plane in t.data().chunks(h * w) {
            for row in p.y..p.y + patch {
                let start = row * w + p.x;
                data.extend_from_slice(&plane[start..start + patch]);
            }
        }
    }
    Tensor::from_vec(plan.len(), c, patch, patch, data).expect("batch shape")
}

fn patch_rng(cfg: &TrainConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_PATCHES))
}

/// Trains a freshly initialized TPN on `ℓ_T = MSE(T̃, T*)`.
pub fn train_tpn(set: &TrainSet, cfg: &TrainConfig) -> Result<TrainOutcome<TpnModel>> {
    let mut model = TpnModel::new(TpnConfig::default(), derive_seed(cfg.seed, STREAM_TPN_INIT))?;
    let losses = fit_tpn(&mut model, set, cfg)?;
    Ok(TrainOutcome { model, losses })
}

/// Continues training `model` in place for `cfg.steps` steps.
pub fn fit_tpn(model: &mut TpnModel, set: &TrainSet, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    set.check(cfg.patch_size, model.config.divisor())?;
    model.params.reset_momentum();
    let mut rng = patch_rng(cfg);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let plan = plan_batch(&mut rng, set, cfg.batch_size, cfg.patch_size);
        let x = gather(&plan, cfg.patch_size, |i| &set.planes[i].input);
        let gt = gather(&plan, cfg.patch_size, |i| &set.planes[i].texture_gt);
        let cache = model.forward_cached(&x)?;
        let (loss, grad) = mse_loss(cache.output(), &gt)?;
        let (grads, _) = model.backward(&cache, &grad)?;
        sgd_momentum_step(&mut model.params, &grads, cfg.learning_rate, cfg.momentum)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// `ℓ_E = (Σ_m BCE(side_m, E*) + BCE(fused, E*)) / (n·h·w)` with gradients
/// for each map. The per-pixel scaling keeps `ℓ_E` on the same footing as
/// the mean-squared terms.
pub fn spn_loss(out: &super::SpnOutput<f32>, gt: &Tensor<f32>) -> Result<(f64, Vec<Tensor<f32>>, Tensor<f32>)> {
    let pixels = (gt.n() * gt.h() * gt.w()) as f64;
    let scale = (1.0 / pixels) as f32;
    let mut total = 0.0;
    let mut side_grads = Vec::with_capacity(SPN_STAGES);
    for side in &out.sides {
        let (l, mut g) = weighted_bce_loss(side, gt)?;
        total += l;
        g.scale(scale);
        side_grads.push(g);
    }
    let (l, mut fused_grad) = weighted_bce_loss(&out.fused, gt)?;
    fused_grad.scale(scale);
    Ok(((total + l) / pixels, side_grads, fused_grad))
}

/// Trains a freshly initialized SPN with deep supervision on every side output.
pub fn train_spn(set: &TrainSet, cfg: &TrainConfig) -> Result<TrainOutcome<SpnModel>> {
    let mut model = SpnModel::new(SpnConfig::default(), derive_seed(cfg.seed, STREAM_SPN_INIT))?;
    let losses = fit_spn(&mut model, set, cfg)?;
    Ok(TrainOutcome { model, losses })
}

pub fn fit_spn(model: &mut SpnModel, set: &TrainSet, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    set.check(cfg.patch_size, model.config.divisor())?;
    model.params.reset_momentum();
    let mut rng = patch_rng(cfg);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let plan = plan_batch(&mut rng, set, cfg.batch_size, cfg.patch_size);
        let x = gather(&plan, cfg.patch_size, |i| &set.planes[i].input);
        let gt = gather(&plan, cfg.patch_size, |i| &set.planes[i].edges);
        let cache = model.forward_cached(&x)?;
        let (loss, side_grads, fused_grad) = spn_loss(&cache.output, &gt)?;
        let (grads, _) = model.backward(&cache, &side_grads, &fused_grad)?;
        sgd_momentum_step(&mut model.params, &grads, cfg.learning_rate, cfg.momentum)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Guidance maps of every sample, predicted once on the full image by the
/// frozen guidance networks.
#[derive(Debug, Clone)]
pub struct GuidanceCache {
    edges: Vec<Tensor<f32>>,
    texture: Vec<Tensor<f32>>,
}

impl GuidanceCache {
    pub fn new(set: &TrainSet, tpn: &TpnModel, spn: &SpnModel, ablation: Ablation) -> Result<Self> {
        let maps = crate::par::map_indexed(set.len(), |i| guidance_maps(tpn, spn, &set.samples[i].input, ablation))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let (edges, texture) = maps.into_iter().unzip();
        Ok(Self { edges, texture })
    }
}

/// Trains a freshly initialized TSAFN on `ℓ_D = MSE(Ĩ, S)` with frozen guidance.
pub fn train_tsafn(
    set: &TrainSet,
    cfg: &TrainConfig,
    tpn: &TpnModel,
    spn: &SpnModel,
) -> Result<TrainOutcome<TsafnModel>> {
    train_tsafn_ablation(set, cfg, tpn, spn, Ablation::Double)
}

/// Like [`train_tsafn`] with some guidance channels replaced by the neutral value.
pub fn train_tsafn_ablation(
    set: &TrainSet,
    cfg: &TrainConfig,
    tpn: &TpnModel,
    spn: &SpnModel,
    ablation: Ablation,
) -> Result<TrainOutcome<TsafnModel>> {
    let mut model = TsafnModel::new(TsafnConfig::default(), derive_seed(cfg.seed, STREAM_TSAFN_INIT))?;
    let guidance = GuidanceCache::new(set, tpn, spn, ablation)?;
    let losses = fit_tsafn(&mut model, set, &guidance, cfg)?;
    Ok(TrainOutcome { model, losses })
}

pub fn fit_tsafn(
    model: &mut TsafnModel,
    set: &TrainSet,
    guidance: &GuidanceCache,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    set.check(cfg.patch_size, 1)?;
    if guidance.edges.len() != set.len() {
        return invalid("guidance cache does not match the training set");
    }
    model.params.reset_momentum();
    let mut rng = patch_rng(cfg);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let plan = plan_batch(&mut rng, set, cfg.batch_size, cfg.patch_size);
        let p = cfg.patch_size;
        let x = tsafn_input(
            &gather(&plan, p, |i| &set.planes[i].input),
            &gather(&plan, p, |i| &guidance.edges[i]),
            &gather(&plan, p, |i| &guidance.texture[i]),
        )?;
        let gt = gather(&plan, p, |i| &set.planes[i].structure);
        let cache = model.forward_cached(&x)?;
        let (loss, grad) = mse_loss(&cache.output, &gt)?;
        let (grads, _) = model.backward(&cache, &grad)?;
        sgd_momentum_step(&mut model.params, &grads, cfg.learning_rate, cfg.momentum)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Mean per-pixel MSE of the TSAFN output over whole samples.
pub fn evaluate_tsafn(model: &TsafnModel, set: &TrainSet, guidance: &GuidanceCache) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (i, p) in set.planes.iter().enumerate() {
        let x = tsafn_input(&p.input, &guidance.edges[i], &guidance.texture[i])?;
        total += mse_loss(&model.forward(&x)?, &p.structure)?.0;
    }
    Ok(total / set.len() as f64)
}

/// Loss terms of one fine-tuning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    pub total: f64,
    pub l_d: f64,
    pub l_t: f64,
    pub l_e: f64,
}

/// Loss terms and parameter gradients of the joint objective on one batch.
pub struct JointStep {
    pub loss: JointLoss,
    pub tpn_grads: Vec<Tensor<f32>>,
    pub spn_grads: Vec<Tensor<f32>>,
    pub tsafn_grads: Vec<Tensor<f32>>,
}

/// Forward and backward of `γ·ℓ_D + λ·(ℓ_T + ℓ_E)` where `ℓ_D` also
/// backpropagates through the guidance channels into TPN and SPN.
pub fn joint_step(
    models: &Models,
    input: &Tensor<f32>,
    structure: &Tensor<f32>,
    texture_gt: &Tensor<f32>,
    edges_gt: &Tensor<f32>,
    weights: &LossWeights,
) -> Result<JointStep> {
    let tpn_cache = models.tpn.forward_cached(input)?;
    let spn_cache = models.spn.forward_cached(input)?;
    let x = tsafn_input(input, &spn_cache.output.fused, tpn_cache.output())?;
    let tsafn_cache = models.tsafn.forward_cached(&x)?;

    let (l_d, mut g_d) = mse_loss(&tsafn_cache.output, structure)?;
    let (l_t, mut g_t) = mse_loss(tpn_cache.output(), texture_gt)?;
    let (l_e, mut g_sides, mut g_fused) = spn_loss(&spn_cache.output, edges_gt)?;
    let gamma = weights.gamma as f32;
    let lambda = weights.lambda as f32;
    g_d.scale(gamma);
    g_t.scale(lambda);
    g_fused.scale(lambda);
    for g in &mut g_sides {
        g.scale(lambda);
    }

    let (tsafn_grads, g_x) = models.tsafn.backward(&tsafn_cache, &g_d)?;
    let parts = split_channels(&g_x, &[3, 1, 1])?;
    g_fused.add_assign(&parts[1]);
    g_t.add_assign(&parts[2]);
    let (spn_grads, _) = models.spn.backward(&spn_cache, &g_sides, &g_fused)?;
    let (tpn_grads, _) = models.tpn.backward(&tpn_cache, &g_t)?;
    Ok(JointStep {
        loss: JointLoss {
            total: combined_finetune_loss(l_d, l_t, l_e, weights),
            l_d,
            l_t,
            l_e,
        },
        tpn_grads,
        spn_grads,
        tsafn_grads,
    })
}

/// Joint fine-tuning of all three networks at `cfg.finetune_learning_rate`.
/// Momentum buffers restart from zero.
pub fn finetune_joint(
    set: &TrainSet,
    cfg: &TrainConfig,
    models: &mut Models,
    weights: &LossWeights,
) -> Result<Vec<JointLoss>> {
    cfg.validate()?;
    let divisor = models.tpn.config.divisor().max(models.spn.config.divisor());
    set.check(cfg.patch_size, divisor)?;
    models.tpn.params.reset_momentum();
    models.spn.params.reset_momentum();
    models.tsafn.params.reset_momentum();
    let mut rng = patch_rng(cfg);
    let lr = cfg.finetune_learning_rate;
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let plan = plan_batch(&mut rng, set, cfg.batch_size, cfg.patch_size);
        let p = cfg.patch_size;
        let step = joint_step(
            models,
            &gather(&plan, p, |i| &set.planes[i].input),
            &gather(&plan, p, |i| &set.planes[i].structure),
            &gather(&plan, p, |i| &set.planes[i].texture_gt),
            &gather(&plan, p, |i| &set.planes[i].edges),
            weights,
        )?;
        sgd_momentum_step(&mut models.tpn.params, &step.tpn_grads, lr, cfg.momentum)?;
        sgd_momentum_step(&mut models.spn.params, &step.spn_grads, lr, cfg.momentum)?;
        sgd_momentum_step(&mut models.tsafn.params, &step.tsafn_grads, lr, cfg.momentum)?;
        history.push(step.loss);
    }
    Ok(history)
}

/// Means of consecutive `window`-sized chunks (a trailing partial chunk is dropped).
pub fn window_means(losses: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    losses
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}
