use rand::Rng;

use crate::error::Result;
use crate::imagecore::{Scalar, Tensor};
use crate::nnkernel::{conv2d_backward, conv2d_forward, ConvSpec, Init, ModelParams};

/// A convolution bound to its weight and bias slots in a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvLayer {
    pub spec: ConvSpec,
    pub w: usize,
    pub b: usize,
}

impl ConvLayer {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        params: &mut ModelParams<T>,
        name: &str,
        spec: ConvSpec,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let (w, b) = params.push_conv(name, &spec, init, rng);
        Self { spec, w, b }
    }

    /// Re-binds a layer to an existing parameter set by name.
    pub fn bind<T: Scalar>(params: &ModelParams<T>, name: &str, spec: ConvSpec) -> Self {
        let w = params.index_of(&format!("{name}.w")).expect("layer weight registered");
        let b = params.index_of(&format!("{name}.b")).expect("layer bias registered");
        Self { spec, w, b }
    }

    pub fn forward<T: Scalar>(&self, p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.spec, p.value(self.w), p.value(self.b))
    }

    /// Accumulates weight/bias gradients into `grads` and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut [Tensor<T>],
    ) -> Result<Tensor<T>> {
        let g = conv2d_backward(x, &self.spec, p.value(self.w), grad_out)?;
        grads[self.w].add_assign(&g.grad_w);
        grads[self.b].add_assign(&g.grad_b);
        Ok(g.grad_x)
    }
}

/// Forward state of a conv followed by ReLU.
pub(crate) struct ReluStep<T: Scalar> {
    pub input: Tensor<T>,
    pub pre: Tensor<T>,
}

pub(crate) fn relu_in_place<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) fn relu_grad<T: Scalar>(pre: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut out = grad.clone();
    for (g, &z) in out.data_mut().iter_mut().zip(pre.data()) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
    out
}

/// Runs a chain of conv+ReLU layers, keeping what backward needs.
pub(crate) fn relu_chain_forward<T: Scalar>(
    layers: &[ConvLayer],
    p: &ModelParams<T>,
    x: &Tensor<T>,
) -> Result<(Vec<ReluStep<T>>, Tensor<T>)> {
    let mut steps = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for layer in layers {
        let pre = layer.forward(p, &cur)?;
        let next = relu_in_place(&pre);
        steps.push(ReluStep { input: cur, pre });
        cur = next;
    }
    Ok((steps, cur))
}

pub(crate) fn relu_chain_backward<T: Scalar>(
    layers: &[ConvLayer],
    steps: &[ReluStep<T>],
    p: &ModelParams<T>,
    grad_out: Tensor<T>,
    grads: &mut [Tensor<T>],
) -> Result<Tensor<T>> {
    let mut g = grad_out;
    for (layer, step) in layers.iter().zip(steps).rev() {
        let gz = relu_grad(&step.pre, &g);
        g = layer.backward(p, &step.input, &gz, grads)?;
    }
    Ok(g)
}
