//! Structure prediction network: three conv stages, the last two entered
//! with a stride-2 conv. Each stage has a 1×1 side conv producing an edge
//! logit that is upsampled to input size; a 1×1 conv fuses the side logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_chain_backward, relu_chain_forward, ConvLayer, ReluStep};
use crate::error::{invalid, Result};
use crate::imagecore::{Scalar, Tensor};
use crate::nnkernel::{
    concat_channels, resize_bilinear_backward, resize_bilinear_layer, sigmoid, split_channels, ConvSpec, Init,
    ModelParams,
};

pub const SPN_STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpnConfig {
    /// Channel width of each stage.
    pub widths: [usize; SPN_STAGES],
}

impl Default for SpnConfig {
    fn default() -> Self {
        Self { widths: [8, 16, 16] }
    }
}

impl SpnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return invalid("spn stage widths must be positive");
        }
        Ok(())
    }

    /// Input sides must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (SPN_STAGES - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpnModel<T: Scalar = f32> {
    pub config: SpnConfig,
    pub params: ModelParams<T>,
    stages: Vec<[ConvLayer; 2]>,
    sides: Vec<ConvLayer>,
    fusion: ConvLayer,
}

/// Sigmoid edge maps: one per stage plus the fused map, all at input size.
#[derive(Debug, Clone)]
pub struct SpnOutput<T: Scalar> {
    pub sides: Vec<Tensor<T>>,
    pub fused: Tensor<T>,
}

pub struct SpnCache<T: Scalar> {
    input_h: usize,
    input_w: usize,
    stages: Vec<Vec<ReluStep<T>>>,
    stage_out: Vec<Tensor<T>>,
    concat: Tensor<T>,
    pub output: SpnOutput<T>,
}

fn stage_specs(cfg: &SpnConfig) -> Vec<[ConvSpec; 2]> {
    let mut cin = 3;
    (0..SPN_STAGES)
        .map(|i| {
            let w = cfg.widths[i];
            let stride = if i == 0 { 1 } else { 2 };
            let s = [ConvSpec::new(3, cin, w, stride), ConvSpec::new(3, w, w, 1)];
            cin = w;
            s
        })
        .collect()
}

fn side_spec(cfg: &SpnConfig, i: usize) -> ConvSpec {
    ConvSpec::new(1, cfg.widths[i], 1, 1)
}

fn fusion_spec() -> ConvSpec {
    ConvSpec::new(1, SPN_STAGES, 1, 1)
}

impl<T: Scalar> SpnModel<T> {
    pub fn new(config: SpnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let specs = stage_specs(&config);
        let mut stages = Vec::new();
        let mut sides = Vec::new();
        for (i, s) in specs.iter().enumerate() {
            stages.push(
                [0, 1].map(|j| {
                    ConvLayer::register(&mut params, &format!("spn.s{i}.c{j}"), s[j], Init::Kaiming, &mut rng)
                }),
            );
            sides.push(ConvLayer::register(
                &mut params,
                &format!("spn.side{i}"),
                side_spec(&config, i),
                Init::Xavier,
                &mut rng,
            ));
        }
        let fusion = ConvLayer::register(&mut params, "spn.fuse", fusion_spec(), Init::Xavier, &mut rng);
        Ok(Self {
            config,
            params,
            stages,
            sides,
            fusion,
        })
    }

    pub fn from_params(config: SpnConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let specs = stage_specs(&config);
        let stages = specs
            .iter()
            .enumerate()
            .map(|(i, s)| [0, 1].map(|j| ConvLayer::bind(&params, &format!("spn.s{i}.c{j}"), s[j])))
            .collect();
        let sides = (0..SPN_STAGES)
            .map(|i| ConvLayer::bind(&params, &format!("spn.side{i}"), side_spec(&config, i)))
            .collect();
        let fusion = ConvLayer::bind(&params, "spn.fuse", fusion_spec());
        Ok(Self {
            config,
            params,
            stages,
            sides,
            fusion,
        })
    }

    pub fn cast<U: Scalar>(&self) -> SpnModel<U> {
        SpnModel::from_params(self.config.clone(), self.params.cast()).expect("validated config")
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<SpnOutput<T>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &Tensor<T>) -> Result<SpnCache<T>> {
        let (_, c, h, w) = input.shape();
        if c != 3 {
            return invalid(format!("spn expects RGB input, got {c} channels"));
        }
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return invalid(format!("spn input {h}x{w} must be divisible by {d}"));
        }
        let mut cur = input.clone();
        let mut stages = Vec::new();
        let mut stage_out = Vec::new();
        let mut logits = Vec::new();
        for (layers, side) in self.stages.iter().zip(&self.sides) {
            let (steps, out) = relu_chain_forward(layers, &self.params, &cur)?;
            let side_logit = side.forward(&self.params, &out)?;
            logits.push(resize_bilinear_layer(&side_logit, h, w)?);
            stages.push(steps);
            stage_out.push(out.clone());
            cur = out;
        }
        let refs: Vec<&Tensor<T>> = logits.iter().collect();
        let concat = concat_channels(&refs)?;
        let fused = self.fusion.forward(&self.params, &concat)?.map(sigmoid);
        let sides = logits.iter().map(|l| l.map(sigmoid)).collect();
        Ok(SpnCache {
            input_h: h,
            input_w: w,
            stages,
            stage_out,
            concat,
            output: SpnOutput { sides, fused },
        })
    }

    /// Backward from gradients on the sigmoid side maps and the fused map.
    pub fn backward(
        &self,
        cache: &SpnCache<T>,
        grad_sides: &[Tensor<T>],
        grad_fused: &Tensor<T>,
    ) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        if grad_sides.len() != SPN_STAGES {
            return invalid(format!("expected {SPN_STAGES} side gradients"));
        }
        let mut grads = self.params.zero_grads();
        let g_fused_logit = sigmoid_backward(&cache.output.fused, grad_fused);
        let g_concat = self
            .fusion
            .backward(&self.params, &cache.concat, &g_fused_logit, &mut grads)?;
        let from_fusion = split_channels(&g_concat, &[1; SPN_STAGES])?;
        let mut g_stage_out: Option<Tensor<T>> = None;
        let n = grad_fused.n();
        let mut g_input = Tensor::zeros(n, 3, cache.input_h, cache.input_w);
        for i in (0..SPN_STAGES).rev() {
            let mut g_logit = sigmoid_backward(&cache.output.sides[i], &grad_sides[i]);
            g_logit.add_assign(&from_fusion[i]);
            let out = &cache.stage_out[i];
            let g_side = resize_bilinear_backward(&g_logit, out.h(), out.w())?;
            let mut g_out = self.sides[i].backward(&self.params, out, &g_side, &mut grads)?;
            if let Some(g) = g_stage_out.take() {
                g_out.add_assign(&g);
            }
            let g_in = relu_chain_backward(&self.stages[i], &cache.stages[i], &self.params, g_out, &mut grads)?;
            if i == 0 {
                g_input = g_in;
            } else {
                g_stage_out = Some(g_in);
            }
        }
        Ok((grads, g_input))
    }
}

pub(crate) fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut out = grad.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(y.data()) {
        *g = *g * v * (T::one() - v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_ranges() {
        let spn = SpnModel::<f32>::new(SpnConfig::default(), 3).unwrap();
        let out = spn.forward(&Tensor::full(2, 3, 12, 16, 0.4f32)).unwrap();
        assert_eq!(out.sides.len(), 3);
        for m in out.sides.iter().chain([&out.fused]) {
            assert_eq!(m.shape(), (2, 1, 12, 16));
            assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn rejects_indivisible_dims() {
        let spn = SpnModel::<f32>::new(SpnConfig::default(), 3).unwrap();
        assert!(spn.forward(&Tensor::zeros(1, 3, 10, 12)).is_err());
        assert!(SpnModel::<f32>::new(SpnConfig { widths: [8, 0, 4] }, 0).is_err());
    }

    #[test]
    fn rebinding_preserves_outputs() {
        let spn = SpnModel::<f32>::new(SpnConfig::default(), 5).unwrap();
        let again = SpnModel::from_params(spn.config.clone(), spn.params.clone()).unwrap();
        let x = Tensor::full(1, 3, 8, 8, 0.7f32);
        assert_eq!(spn.forward(&x).unwrap().fused, again.forward(&x).unwrap().fused);
    }
}
