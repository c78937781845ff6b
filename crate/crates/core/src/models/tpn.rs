//! Texture prediction network: four parallel conv stacks on the input at
//! full, 1/2, 1/4 and 1/8 resolution, each resized back to full size,
//! concatenated into 16 channels and fused by a 3×3 conv with a sigmoid.

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

/// Channel count of the concatenated multi-scale features.
pub const TPN_FUSED_CHANNELS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpnConfig {
    /// Down-sampling factors of the branches.
    pub scales: Vec<usize>,
    /// Width of the first two convs in each branch.
    pub hidden: usize,
    /// Output channels of each branch.
    pub branch_out: usize,
}

impl Default for TpnConfig {
    fn default() -> Self {
        Self {
            scales: vec![1, 2, 4, 8],
            hidden: 8,
            branch_out: 4,
        }
    }
}

impl TpnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.contains(&0) || self.hidden == 0 {
            return invalid("tpn needs non-empty positive scales and widths");
        }
        if self.scales.len() * self.branch_out != TPN_FUSED_CHANNELS {
            return invalid(format!(
                "tpn branches must concatenate to {TPN_FUSED_CHANNELS} channels, got {}",
                self.scales.len() * self.branch_out
            ));
        }
        Ok(())
    }

    /// Input sides must be divisible by this.
    pub fn divisor(&self) -> usize {
        self.scales.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpnModel<T: Scalar = f32> {
    pub config: TpnConfig,
    pub params: ModelParams<T>,
    branches: Vec<[ConvLayer; 3]>,
    fusion: ConvLayer,
}

struct Branch<T: Scalar> {
    steps: Vec<ReluStep<T>>,
    small_h: usize,
    small_w: usize,
}

/// Forward state kept for [`TpnModel::backward`].
pub struct TpnCache<T: Scalar> {
    input_h: usize,
    input_w: usize,
    branches: Vec<Branch<T>>,
    concat: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Scalar> TpnCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

fn layer_names(i: usize) -> [String; 3] {
    [0, 1, 2].map(|j| format!("tpn.s{i}.c{j}"))
}

fn branch_specs(cfg: &TpnConfig) -> [ConvSpec; 3] {
    [
        ConvSpec::new(3, 3, cfg.hidden, 1),
        ConvSpec::new(3, cfg.hidden, cfg.hidden, 1),
        ConvSpec::new(3, cfg.hidden, cfg.branch_out, 1),
    ]
}

fn fusion_spec() -> ConvSpec {
    ConvSpec::new(3, TPN_FUSED_CHANNELS, 1, 1)
}

impl<T: Scalar> TpnModel<T> {
    pub fn new(config: TpnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let specs = branch_specs(&config);
        let branches = (0..config.scales.len())
            .map(|i| {
                let names = layer_names(i);
                [0, 1, 2].map(|j| ConvLayer::register(&mut params, &names[j], specs[j], Init::Kaiming, &mut rng))
            })
            .collect();
        let fusion = ConvLayer::register(&mut params, "tpn.fuse", fusion_spec(), Init::Xavier, &mut rng);
        Ok(Self {
            config,
            params,
            branches,
            fusion,
        })
    }

    /// Rebuilds the layer bindings around an existing parameter set.
    pub fn from_params(config: TpnConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let specs = branch_specs(&config);
        let branches = (0..config.scales.len())
            .map(|i| {
                let names = layer_names(i);
                [0, 1, 2].map(|j| ConvLayer::bind(&params, &names[j], specs[j]))
            })
            .collect();
        let fusion = ConvLayer::bind(&params, "tpn.fuse", fusion_spec());
        Ok(Self {
            config,
            params,
            branches,
            fusion,
        })
    }

    pub fn cast<U: Scalar>(&self) -> TpnModel<U> {
        TpnModel::from_params(self.config.clone(), self.params.cast()).expect("validated config")
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &Tensor<T>) -> Result<TpnCache<T>> {
        let (_, c, h, w) = input.shape();
        if c != 3 {
            return invalid(format!("tpn expects RGB input, got {c} channels"));
        }
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return invalid(format!("tpn input {h}x{w} must be divisible by {d}"));
        }
        let mut branches = Vec::with_capacity(self.branches.len());
        let mut features = Vec::with_capacity(self.branches.len());
        for (layers, &s) in self.branches.iter().zip(&self.config.scales) {
            let (sh, sw) = (h / s, w / s);
            let small = resize_bilinear_layer(input, sh, sw)?;
            let (steps, out) = relu_chain_forward(layers, &self.params, &small)?;
            features.push(resize_bilinear_layer(&out, h, w)?);
            branches.push(Branch {
                steps,
                small_h: sh,
                small_w: sw,
            });
        }
        let refs: Vec<&Tensor<T>> = features.iter().collect();
        let concat = concat_channels(&refs)?;
        let logits = self.fusion.forward(&self.params, &concat)?;
        let output = logits.map(sigmoid);
        Ok(TpnCache {
            input_h: h,
            input_w: w,
            branches,
            concat,
            output,
        })
    }

    /// Backward from a gradient on the sigmoid output. Returns parameter
    /// gradients (aligned with `self.params`) and the input gradient.
    pub fn backward(&self, cache: &TpnCache<T>, grad_output: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let mut grads = self.params.zero_grads();
        let mut g_logit = grad_output.clone();
        for (g, &y) in g_logit.data_mut().iter_mut().zip(cache.output.data()) {
            *g = *g * y * (T::one() - y);
        }
        let g_concat = self
            .fusion
            .backward(&self.params, &cache.concat, &g_logit, &mut grads)?;
        let sizes = vec![self.config.branch_out; self.branches.len()];
        let parts = split_channels(&g_concat, &sizes)?;
        let (n, _, h, w) = (grad_output.n(), 3, cache.input_h, cache.input_w);
        let mut g_input = Tensor::zeros(n, 3, h, w);
        for ((layers, branch), g_up) in self.branches.iter().zip(&cache.branches).zip(parts) {
            let g_small_out = resize_bilinear_backward(&g_up, branch.small_h, branch.small_w)?;
            let g_small_in = relu_chain_backward(layers, &branch.steps, &self.params, g_small_out, &mut grads)?;
            g_input.add_assign(&resize_bilinear_backward(&g_small_in, h, w)?);
        }
        Ok((grads, g_input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_and_range() {
        let tpn = TpnModel::<f32>::new(TpnConfig::default(), 1).unwrap();
        let x = Tensor::full(2, 3, 16, 24, 0.5f32);
        let y = tpn.forward(&x).unwrap();
        assert_eq!(y.shape(), (2, 1, 16, 24));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_weights_give_one_half() {
        let mut tpn = TpnModel::<f32>::new(TpnConfig::default(), 1).unwrap();
        tpn.params.fill(0.0);
        let y = tpn.forward(&Tensor::full(1, 3, 8, 8, 0.3f32)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_indivisible_dims_and_bad_config() {
        let tpn = TpnModel::<f32>::new(TpnConfig::default(), 1).unwrap();
        assert!(tpn.forward(&Tensor::zeros(1, 3, 12, 16)).is_err());
        assert!(tpn.forward(&Tensor::zeros(1, 1, 16, 16)).is_err());
        let bad = TpnConfig {
            branch_out: 3,
            ..TpnConfig::default()
        };
        assert!(TpnModel::<f32>::new(bad, 0).is_err());
    }

    #[test]
    fn concatenated_features_have_sixteen_channels() {
        let tpn = TpnModel::<f32>::new(TpnConfig::default(), 2).unwrap();
        let cache = tpn.forward_cached(&Tensor::full(1, 3, 8, 8, 0.2f32)).unwrap();
        assert_eq!(cache.concat.c(), 16);
    }
}
