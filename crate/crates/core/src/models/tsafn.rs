//! Texture and structure aware filtering network: a four-layer conv stack
//! on the concatenation of the image, the edge map and the texture map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_chain_backward, relu_chain_forward, ConvLayer, ReluStep};
use crate::error::{invalid, Result};
use crate::imagecore::{Scalar, Tensor};
use crate::nnkernel::{concat_channels, ConvSpec, Init, ModelParams};

/// Subtracted from every input value before the first layer.
pub const INPUT_CENTER: f64 = 0.5;

/// Channels of the filter input: RGB, edge map, texture map.
pub const TSAFN_IN_CHANNELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsafnConfig {
    /// Output channels of the three hidden layers.
    pub widths: [usize; 3],
    /// Kernel sizes of the four layers.
    pub kernels: [usize; 4],
}

impl Default for TsafnConfig {
    fn default() -> Self {
        Self {
            widths: [32, 16, 8],
            kernels: [7, 5, 3, 5],
        }
    }
}

impl TsafnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return invalid("tsafn widths must be positive");
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return invalid("tsafn kernels must be odd");
        }
        Ok(())
    }

    fn specs(&self) -> [ConvSpec; 4] {
        let [a, b, c] = self.widths;
        let [k0, k1, k2, k3] = self.kernels;
        [
            ConvSpec::new(k0, TSAFN_IN_CHANNELS, a, 1),
            ConvSpec::new(k1, a, b, 1),
            ConvSpec::new(k2, b, c, 1),
            ConvSpec::new(k3, c, 3, 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsafnModel<T: Scalar = f32> {
    pub config: TsafnConfig,
    pub params: ModelParams<T>,
    hidden: [ConvLayer; 3],
    output: ConvLayer,
}

pub struct TsafnCache<T: Scalar> {
    steps: Vec<ReluStep<T>>,
    last_in: Tensor<T>,
    pub output: Tensor<T>,
}

/// Stacks `[image, edges, texture]` along channels.
pub fn tsafn_input<T: Scalar>(image: &Tensor<T>, edges: &Tensor<T>, texture: &Tensor<T>) -> Result<Tensor<T>> {
    if image.c() != 3 || edges.c() != 1 || texture.c() != 1 {
        return invalid("tsafn input expects 3 image, 1 edge and 1 texture channel");
    }
    concat_channels(&[image, edges, texture])
}

impl<T: Scalar> TsafnModel<T> {
    pub fn new(config: TsafnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let specs = config.specs();
        let hidden = [0, 1, 2]
            .map(|i| ConvLayer::register(&mut params, &format!("tsafn.c{i}"), specs[i], Init::Kaiming, &mut rng));
        let output = ConvLayer::register(&mut params, "tsafn.c3", specs[3], Init::Xavier, &mut rng);
        Ok(Self {
            config,
            params,
            hidden,
            output,
        })
    }

    pub fn from_params(config: TsafnConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let specs = config.specs();
        let hidden = [0, 1, 2].map(|i| ConvLayer::bind(&params, &format!("tsafn.c{i}"), specs[i]));
        let output = ConvLayer::bind(&params, "tsafn.c3", specs[3]);
        Ok(Self {
            config,
            params,
            hidden,
            output,
        })
    }

    pub fn cast<U: Scalar>(&self) -> TsafnModel<U> {
        TsafnModel::from_params(self.config.clone(), self.params.cast()).expect("validated config")
    }

    /// Runs the filter on a 5-channel input and returns the linear RGB output.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &Tensor<T>) -> Result<TsafnCache<T>> {
        if input.c() != TSAFN_IN_CHANNELS {
            return invalid(format!("tsafn expects {TSAFN_IN_CHANNELS} channels, got {}", input.c()));
        }
        let centered = input.map(|v| v - T::from_f64(INPUT_CENTER));
        let (steps, last_in) = relu_chain_forward(&self.hidden, &self.params, &centered)?;
        let output = self.output.forward(&self.params, &last_in)?;
        Ok(TsafnCache { steps, last_in, output })
    }

    /// Returns parameter gradients and the gradient on the 5-channel input.
    pub fn backward(&self, cache: &TsafnCache<T>, grad_output: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let mut grads = self.params.zero_grads();
        let g = self
            .output
            .backward(&self.params, &cache.last_in, grad_output, &mut grads)?;
        let g_in = relu_chain_backward(&self.hidden, &cache.steps, &self.params, g, &mut grads)?;
        Ok((grads, g_in))
    }
}
