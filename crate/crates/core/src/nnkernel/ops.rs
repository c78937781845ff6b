use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagecore::{axis_taps, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn activation_forward<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Multiplies `grad` by the pointwise derivative. ReLU takes its input
/// `x` (derivative 0 at exactly 0); sigmoid takes its output `y`.
pub fn activation_backward<T: Scalar>(kind: Activation, x_or_y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if !x_or_y.same_shape(grad) {
        return invalid("activation backward shape mismatch");
    }
    let mut out = grad.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x_or_y.data()) {
        *g = match kind {
            Activation::Relu => {
                if v > T::zero() {
                    *g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => *g * v * (T::one() - v),
        };
    }
    Ok(out)
}

/// Stacks tensors along the channel axis in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = xs.first() else {
        return invalid("concat of zero tensors");
    };
    let (n, _, h, w) = first.shape();
    if let Some(bad) = xs.iter().find(|t| (t.n(), t.h(), t.w()) != (n, h, w)) {
        return invalid(format!(
            "concat needs equal n,h,w: {:?} vs {:?}",
            bad.shape(),
            first.shape()
        ));
    }
    let c: usize = xs.iter().map(|t| t.c()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for t in xs {
            data.extend_from_slice(t.sample(i));
        }
    }
    Tensor::from_vec(n, c, h, w, data)
}

/// Backward of [`concat_channels`]: splits a gradient at the same channel
/// boundaries.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if sizes.iter().sum::<usize>() != grad.c() {
        return invalid("split sizes do not add up to the channel count");
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&c| {
            let part = grad.channels(start, c);
            start += c;
            part
        })
        .collect()
}

/// Bilinear resize of every channel (half-pixel centers, clamped borders).
pub fn resize_bilinear_layer<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return invalid("resize target must be >= 1");
    }
    let (n, c, h, w) = x.shape();
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let mut out = Tensor::zeros(n, c, out_h, out_w);
    let dst = out.data_mut();
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, ty) in ys.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(1.0 - ty.w), T::from_f64(ty.w));
            for (ox, tx) in xs.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(1.0 - tx.w), T::from_f64(tx.w));
                let top = src[ty.i0 * w + tx.i0] * wx0 + src[ty.i0 * w + tx.i1] * wx1;
                let bot = src[ty.i1 * w + tx.i0] * wx0 + src[ty.i1 * w + tx.i1] * wx1;
                d[oy * out_w + ox] = top * wy0 + bot * wy1;
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`resize_bilinear_layer`]: scatters `grad` (shaped like
/// the resized output) back onto an `in_h × in_w` grid.
pub fn resize_bilinear_backward<T: Scalar>(grad: &Tensor<T>, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
    if in_h == 0 || in_w == 0 {
        return invalid("resize source must be >= 1");
    }
    let (n, c, out_h, out_w) = grad.shape();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(grad.clone());
    }
    let ys = axis_taps(in_h, out_h);
    let xs = axis_taps(in_w, out_w);
    let mut out = Tensor::zeros(n, c, in_h, in_w);
    let dst = out.data_mut();
    for plane in 0..n * c {
        let g = &grad.data()[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        let d = &mut dst[plane * in_h * in_w..(plane + 1) * in_h * in_w];
        for (oy, ty) in ys.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(1.0 - ty.w), T::from_f64(ty.w));
            for (ox, tx) in xs.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(1.0 - tx.w), T::from_f64(tx.w));
                let v = g[oy * out_w + ox];
                let top = v * wy0;
                let bot = v * wy1;
                d[ty.i0 * in_w + tx.i0] = d[ty.i0 * in_w + tx.i0] + top * wx0;
                d[ty.i0 * in_w + tx.i1] = d[ty.i0 * in_w + tx.i1] + top * wx1;
                d[ty.i1 * in_w + tx.i0] = d[ty.i1 * in_w + tx.i0] + bot * wx0;
                d[ty.i1 * in_w + tx.i1] = d[ty.i1 * in_w + tx.i1] + bot * wx1;
            }
        }
    }
    Ok(out)
}

/// `(1/N)·Σ_pixels ‖pred − gt‖²` with `N = n·h·w` (channels are summed per
/// pixel), and its gradient `(2/N)(pred − gt)`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if !pred.same_shape(gt) {
        return invalid(format!("mse shapes differ: {:?} vs {:?}", pred.shape(), gt.shape()));
    }
    let pixels = (pred.n() * pred.h() * pred.w()) as f64;
    let mut grad = Tensor::zeros_like(pred);
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(gt.data()) {
        let d = p.as_f64() - t.as_f64();
        sum += d * d;
        *g = T::from_f64(2.0 * d / pixels);
    }
    Ok((sum / pixels, grad))
}

pub const BCE_EPS: f64 = 1e-7;

/// Class-balanced binary cross-entropy
/// `−β·Σ_{gt=1} log p − (1−β)·Σ_{gt=0} log(1−p)` where `β` is the fraction
/// of positive labels, computed per batch entry. Predictions are clamped to
/// `[ε, 1−ε]`; the gradient is that of the clamped function.
pub fn weighted_bce_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if !pred.same_shape(gt) {
        return invalid(format!("bce shapes differ: {:?} vs {:?}", pred.shape(), gt.shape()));
    }
    if gt.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return invalid("bce ground truth must be binary");
    }
    let mut grad = Tensor::zeros_like(pred);
    let mut loss = 0.0;
    let per = pred.c() * pred.h() * pred.w();
    for i in 0..pred.n() {
        let g = &gt.data()[i * per..(i + 1) * per];
        let p = &pred.data()[i * per..(i + 1) * per];
        let beta = g.iter().filter(|&&v| v == T::one()).count() as f64 / per as f64;
        let out = &mut grad.data_mut()[i * per..(i + 1) * per];
        for ((o, &pv), &gv) in out.iter_mut().zip(p).zip(g) {
            let raw = pv.as_f64();
            let pc = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let inside = raw > BCE_EPS && raw < 1.0 - BCE_EPS;
            if gv == T::one() {
                loss -= beta * pc.ln();
                *o = T::from_f64(if inside { -beta / pc } else { 0.0 });
            } else {
                loss -= (1.0 - beta) * (1.0 - pc).ln();
                *o = T::from_f64(if inside { (1.0 - beta) / (1.0 - pc) } else { 0.0 });
            }
        }
    }
    Ok((loss, grad))
}

/// Loss weights of the joint fine-tuning objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.6,
            lambda: 0.2,
        }
    }
}

/// `γ·l_D + λ·(l_T + l_E)`.
pub fn combined_finetune_loss(l_d: f64, l_t: f64, l_e: f64, w: &LossWeights) -> f64 {
    w.gamma * l_d + w.lambda * (l_t + l_e)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn activation_values() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![-3.0f64, 0.0, 3.0]).unwrap();
        let r = activation_forward(&x, Activation::Relu);
        assert_eq!(r.data(), &[0.0, 0.0, 3.0]);
        let s = activation_forward(&x, Activation::Sigmoid);
        assert_eq!(s.data()[1], 0.5);
        let ones = Tensor::full(1, 1, 1, 3, 1.0);
        let ds = activation_backward(Activation::Sigmoid, &s, &ones).unwrap();
        assert_eq!(ds.data()[1], 0.25);
        let dr = activation_backward(Activation::Relu, &x, &ones).unwrap();
        assert_eq!(dr.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_split() {
        let parts: Vec<Tensor<f64>> = (0..4).map(|i| random(2, 4, 3, 3, i)).collect();
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let cat = concat_channels(&refs).unwrap();
        assert_eq!(cat.shape(), (2, 16, 3, 3));
        let back = split_channels(&cat, &[4, 4, 4, 4]).unwrap();
        assert_eq!(back, parts);
        assert_eq!(concat_channels(&[&parts[0]]).unwrap(), parts[0]);
        let other = random(2, 1, 4, 3, 9);
        assert!(concat_channels(&[&parts[0], &other]).is_err());
    }

    #[test]
    fn resize_identity_both_ways() {
        let x = random(1, 2, 5, 6, 1);
        assert_eq!(resize_bilinear_layer(&x, 5, 6).unwrap(), x);
        assert_eq!(resize_bilinear_backward(&x, 5, 6).unwrap(), x);
    }

    #[test]
    fn resize_adjoint_identity() {
        for (h, w, oh, ow) in [(8, 8, 4, 4), (3, 5, 7, 2), (1, 1, 4, 4), (8, 8, 1, 1), (6, 4, 13, 9)] {
            let x = random(2, 3, h, w, 10 + h as u64);
            let y = random(2, 3, oh, ow, 20 + ow as u64);
            let lhs = resize_bilinear_layer(&x, oh, ow).unwrap().dot(&y);
            let rhs = x.dot(&resize_bilinear_backward(&y, h, w).unwrap());
            assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn mse_examples() {
        let a = random(1, 3, 2, 2, 4);
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let p = Tensor::from_vec(1, 1, 1, 1, vec![0.5f64]).unwrap();
        let t = Tensor::from_vec(1, 1, 1, 1, vec![0.0f64]).unwrap();
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 0.25);
        assert_eq!(g.data(), &[1.0]);
        assert!(mse_loss(&p, &a).is_err());
    }

    #[test]
    fn bce_examples() {
        let p = Tensor::from_vec(1, 1, 1, 2, vec![0.5f64, 0.5]).unwrap();
        let g = Tensor::from_vec(1, 1, 1, 2, vec![1.0f64, 0.0]).unwrap();
        let (l, _) = weighted_bce_loss(&p, &g).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let p = Tensor::from_vec(1, 1, 1, 3, vec![0.2f64, 0.7, 0.9]).unwrap();
        let ones = Tensor::full(1, 1, 1, 3, 1.0f64);
        let (l, grad) = weighted_bce_loss(&p, &ones).unwrap();
        let want: f64 = -[0.2f64, 0.7, 0.9].iter().map(|v| v.ln()).sum::<f64>();
        assert!((l - want).abs() < 1e-12);
        for (gv, pv) in grad.data().iter().zip(p.data()) {
            assert!((gv + 1.0 / pv).abs() < 1e-12);
        }

        let near = Tensor::from_vec(1, 1, 1, 2, vec![1.0 - 1e-9, 1e-9f64]).unwrap();
        let gt = Tensor::from_vec(1, 1, 1, 2, vec![1.0f64, 0.0]).unwrap();
        let (l, _) = weighted_bce_loss(&near, &gt).unwrap();
        assert!(l < 1e-6);

        let nonbinary = Tensor::from_vec(1, 1, 1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert!(weighted_bce_loss(&p, &nonbinary).is_err());
    }

    #[test]
    fn finetune_loss_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(combined_finetune_loss(1.0, 1.0, 1.0, &w), 1.0);
        assert_eq!(combined_finetune_loss(0.0, 0.0, 0.0, &w), 0.0);
        let no_lambda = LossWeights {
            gamma: 0.6,
            lambda: 0.0,
        };
        assert_eq!(combined_finetune_loss(2.0, 5.0, 7.0, &no_lambda), 0.6 * 2.0);
    }

    proptest! {
        #[test]
        fn mse_is_nonnegative_and_zero_only_on_equality(
            a in proptest::collection::vec(-1.0f64..1.0, 12),
            b in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let ta = Tensor::from_vec(1, 3, 2, 2, a.clone()).unwrap();
            let tb = Tensor::from_vec(1, 3, 2, 2, b.clone()).unwrap();
            let (l, _) = mse_loss(&ta, &tb).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, a == b);
        }

        #[test]
        fn finetune_loss_is_linear(
            d in 0.0f64..5.0, t in 0.0f64..5.0, e in 0.0f64..5.0, k in 0.0f64..3.0,
        ) {
            let w = LossWeights::default();
            let base = combined_finetune_loss(d, t, e, &w);
            let scaled = combined_finetune_loss(k * d, k * t, k * e, &w);
            prop_assert!((scaled - k * base).abs() < 1e-9);
            let shifted = combined_finetune_loss(d + 1.0, t, e, &w);
            prop_assert!((shifted - base - w.gamma).abs() < 1e-9);
        }
    }
}
