use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagecore::{Scalar, Tensor};
use crate::par;

/// `k×k` convolution with "same" zero padding (`k/2` on every side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kernel,
            in_channels,
            out_channels,
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return invalid(format!("kernel size {} must be odd", self.kernel));
        }
        if self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return invalid("stride and channel counts must be >= 1");
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Output spatial size: `ceil(len / stride)`.
    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride)
    }

    pub fn weight_shape(&self) -> (usize, usize, usize, usize) {
        (self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

fn check_shapes<T: Scalar>(x: &Tensor<T>, spec: &ConvSpec, w: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    spec.validate()?;
    if x.c() != spec.in_channels {
        return invalid(format!(
            "conv input has {} channels, spec expects {}",
            x.c(),
            spec.in_channels
        ));
    }
    if w.shape() != spec.weight_shape() {
        return invalid(format!(
            "conv weight shape {:?} does not match {:?}",
            w.shape(),
            spec.weight_shape()
        ));
    }
    if b.len() != spec.out_channels {
        return invalid(format!(
            "conv bias has {} values, expected {}",
            b.len(),
            spec.out_channels
        ));
    }
    Ok(())
}

/// Output columns `ox` whose input column `ox·s + kx − p` lies inside `0..w`.
fn valid_cols(wo: usize, w: usize, s: usize, kx: usize, p: usize) -> std::ops::Range<usize> {
    // ox·s + kx >= p  and  ox·s + kx - p <= w - 1
    let lo = p.saturating_sub(kx).div_ceil(s).min(wo);
    let hi = if w + p > kx {
        ((w + p - kx - 1) / s + 1).min(wo)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// Unfolds one sample `(C, H, W)` into a `(C·k·k) × (Ho·Wo)` matrix.
fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, spec: &ConvSpec, cols: &mut [T]) {
    let k = spec.kernel;
    let p = spec.padding();
    let s = spec.stride;
    let (ho, wo) = (spec.out_len(h), spec.out_len(w));
    let plane = ho * wo;
    for c in 0..spec.in_channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let valid = valid_cols(wo, w, s, kx, p);
                for oy in 0..ho {
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = oy * s + ky;
                    if iy < p || iy - p >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[(iy - p) * w..(iy - p + 1) * w];
                    line[..valid.start].fill(T::zero());
                    line[valid.end..].fill(T::zero());
                    if valid.is_empty() {
                        continue;
                    }
                    let first = valid.start * s + kx - p;
                    if s == 1 {
                        line[valid.clone()].copy_from_slice(&src[first..first + valid.len()]);
                    } else {
                        for (v, &x) in line[valid.clone()].iter_mut().zip(src[first..].iter().step_by(s)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back onto `(C, H, W)`.
fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, spec: &ConvSpec, x: &mut [T]) {
    let k = spec.kernel;
    let p = spec.padding();
    let s = spec.stride;
    let (ho, wo) = (spec.out_len(h), spec.out_len(w));
    let plane = ho * wo;
    x.fill(T::zero());
    for c in 0..spec.in_channels {
        let xc = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let valid = valid_cols(wo, w, s, kx, p);
                if valid.is_empty() {
                    continue;
                }
                let first = valid.start * s + kx - p;
                for oy in 0..ho {
                    let iy = oy * s + ky;
                    if iy < p || iy - p >= h {
                        continue;
                    }
                    let dst = &mut xc[(iy - p) * w..(iy - p + 1) * w];
                    let line = &src[oy * wo + valid.start..oy * wo + valid.end];
                    for (d, &v) in dst[first..].iter_mut().step_by(s).zip(line) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero "same" padding. `w` is `(out, in, k, k)`,
/// `b` holds one value per output channel.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, spec: &ConvSpec, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_shapes(x, spec, w, b)?;
    let (n, _, h, wd) = x.shape();
    let (ho, wo) = (spec.out_len(h), spec.out_len(wd));
    let plane = ho * wo;
    let rows = spec.fan_in();
    let cout = spec.out_channels;
    let mut out = Tensor::zeros(n, cout, ho, wo);
    par::for_each_chunk(out.data_mut(), cout * plane, |i, dst| {
        let xs = x.sample(i);
        for (c, chunk) in dst.chunks_exact_mut(plane).enumerate() {
            chunk.fill(b.data()[c]);
        }
        if spec.is_pointwise() {
            T::gemm(cout, rows, plane, w.data(), false, xs, false, dst, true);
        } else {
            let mut cols = vec![T::zero(); rows * plane];
            im2col(xs, h, wd, spec, &mut cols);
            T::gemm(cout, rows, plane, w.data(), false, &cols, false, dst, true);
        }
    });
    Ok(out)
}

/// Gradients of a convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

/// Exact backward pass of [`conv2d_forward`]. Per-sample weight gradients
/// are summed in batch order.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let zero_b = Tensor::zeros(spec.out_channels, 1, 1, 1);
    check_shapes(x, spec, w, &zero_b)?;
    let (n, cin, h, wd) = x.shape();
    let (ho, wo) = (spec.out_len(h), spec.out_len(wd));
    if grad_out.shape() != (n, spec.out_channels, ho, wo) {
        return invalid(format!(
            "conv grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            (n, spec.out_channels, ho, wo)
        ));
    }
    let plane = ho * wo;
    let rows = spec.fan_in();
    let cout = spec.out_channels;

    let partials = par::map_indexed(n, |i| {
        let xs = x.sample(i);
        let go = grad_out.sample(i);
        let mut gw = vec![T::zero(); cout * rows];
        let mut gx = vec![T::zero(); cin * h * wd];
        let gb: Vec<T> = go.chunks_exact(plane).map(|c| c.iter().copied().sum()).collect();
        if spec.is_pointwise() {
            T::gemm(cout, plane, rows, go, false, xs, true, &mut gw, false);
            T::gemm(rows, cout, plane, w.data(), true, go, false, &mut gx, false);
        } else {
            let mut cols = vec![T::zero(); rows * plane];
            im2col(xs, h, wd, spec, &mut cols);
            T::gemm(cout, plane, rows, go, false, &cols, true, &mut gw, false);
            T::gemm(rows, cout, plane, w.data(), true, go, false, &mut cols, false);
            col2im(&cols, h, wd, spec, &mut gx);
        }
        (gw, gb, gx)
    });

    let (o, ci, k, _) = spec.weight_shape();
    let mut grad_w = Tensor::zeros(o, ci, k, k);
    let mut grad_b = Tensor::zeros(cout, 1, 1, 1);
    let mut grad_x = Tensor::zeros(n, cin, h, wd);
    for (i, (gw, gb, gx)) in partials.into_iter().enumerate() {
        for (a, v) in grad_w.data_mut().iter_mut().zip(gw) {
            *a = *a + v;
        }
        for (a, v) in grad_b.data_mut().iter_mut().zip(gb) {
            *a = *a + v;
        }
        grad_x.sample_mut(i).copy_from_slice(&gx);
    }
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}

/// Direct-loop convolution; the reference the GEMM path is tested against.
pub fn conv2d_reference<T: Scalar>(x: &Tensor<T>, spec: &ConvSpec, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_shapes(x, spec, w, b)?;
    let (n, cin, h, wd) = x.shape();
    let (ho, wo) = (spec.out_len(h), spec.out_len(wd));
    let k = spec.kernel;
    let p = spec.padding() as isize;
    let mut out = Vec::with_capacity(n * spec.out_channels * ho * wo);
    for i in 0..n {
        for co in 0..spec.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[co].as_f64();
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride) as isize + ky as isize - p;
                                let ix = (ox * spec.stride) as isize + kx as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(i, ci, iy as usize, ix as usize).as_f64() * w.at(co, ci, ky, kx).as_f64();
                            }
                        }
                    }
                    out.push(T::from_f64(acc));
                }
            }
        }
    }
    Tensor::from_vec(n, spec.out_channels, ho, wo, out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(n: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(2, 3, 4, 5, &mut rng);
        let spec = ConvSpec::new(1, 3, 3, 1);
        let mut w = Tensor::zeros(3, 3, 1, 1);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let b = Tensor::zeros(3, 1, 1, 1);
        assert_eq!(conv2d_forward(&x, &spec, &w, &b).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::full(1, 1, 3, 3, 1.0f32);
        let spec = ConvSpec::new(3, 1, 1, 1);
        let w = Tensor::full(1, 1, 3, 3, 1.0f32);
        let b = Tensor::zeros(1, 1, 1, 1);
        let y = conv2d_forward(&x, &spec, &w, &b).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn stride_two_halves_dims() {
        let x = Tensor::<f32>::zeros(1, 2, 64, 64);
        let spec = ConvSpec::new(3, 2, 4, 2);
        let w = Tensor::zeros(4, 2, 3, 3);
        let b = Tensor::zeros(4, 1, 1, 1);
        assert_eq!(conv2d_forward(&x, &spec, &w, &b).unwrap().shape(), (1, 4, 32, 32));
        let odd = Tensor::<f32>::zeros(1, 2, 7, 5);
        assert_eq!(conv2d_forward(&odd, &spec, &w, &b).unwrap().shape(), (1, 4, 4, 3));
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s) in [(1, 1), (1, 2), (3, 1), (3, 2), (5, 1), (7, 1), (5, 2)] {
            let x = random(2, 3, 9, 7, &mut rng);
            let spec = ConvSpec::new(k, 3, 4, s);
            let w = random(4, 3, k, k, &mut rng);
            let b = random(4, 1, 1, 1, &mut rng);
            let fast = conv2d_forward(&x, &spec, &w, &b).unwrap();
            let slow = conv2d_reference(&x, &spec, &w, &b).unwrap();
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} s={s}");
            }
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(2, 3, 6, 6, &mut rng);
        let spec = ConvSpec::new(3, 3, 2, 1);
        let w = random(2, 3, 3, 3, &mut rng);
        let g = conv2d_backward(&x, &spec, &w, &Tensor::zeros(2, 2, 6, 6)).unwrap();
        assert!(g.grad_x.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_channel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(2, 1, 5, 5, &mut rng);
        let spec = ConvSpec::new(3, 1, 2, 1);
        let w = random(2, 1, 3, 3, &mut rng);
        let go = random(2, 2, 5, 5, &mut rng);
        let g = conv2d_backward(&x, &spec, &w, &go).unwrap();
        for c in 0..2 {
            let want: f64 = (0..2)
                .map(|i| go.sample(i)[c * 25..(c + 1) * 25].iter().sum::<f64>())
                .sum();
            assert!((g.grad_b.data()[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let x = Tensor::<f32>::zeros(1, 2, 4, 4);
        let spec = ConvSpec::new(3, 3, 1, 1);
        let w = Tensor::zeros(1, 3, 3, 3);
        let b = Tensor::zeros(1, 1, 1, 1);
        assert!(conv2d_forward(&x, &spec, &w, &b).is_err());
        let even = ConvSpec::new(2, 2, 1, 1);
        assert!(conv2d_forward(&x, &even, &Tensor::zeros(1, 2, 2, 2), &b).is_err());
        let ok = ConvSpec::new(3, 2, 1, 1);
        let w2 = Tensor::zeros(1, 2, 3, 3);
        assert!(conv2d_backward(&x, &ok, &w2, &Tensor::zeros(1, 1, 3, 3)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn forward_and_adjoints_hold_for_any_geometry(
            k in proptest::sample::select(vec![1usize, 3, 5, 7]),
            s in 1usize..=3,
            h in 1usize..10,
            w in 1usize..10,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = ConvSpec::new(k, 2, 3, s);
            let x = random(2, 2, h, w, &mut rng);
            let wt = random(3, 2, k, k, &mut rng);
            let zero_b = Tensor::zeros(3, 1, 1, 1);
            let y = conv2d_forward(&x, &spec, &wt, &zero_b).unwrap();
            let slow = conv2d_reference(&x, &spec, &wt, &zero_b).unwrap();
            for (a, b) in y.data().iter().zip(slow.data()) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
            let go = random(y.n(), y.c(), y.h(), y.w(), &mut rng);
            let g = conv2d_backward(&x, &spec, &wt, &go).unwrap();
            // <conv(x), g> is bilinear in (x, w): both gradients must reproduce it
            let lhs = y.dot(&go);
            proptest::prop_assert!((lhs - x.dot(&g.grad_x)).abs() < 1e-10);
            proptest::prop_assert!((lhs - wt.dot(&g.grad_w)).abs() < 1e-10);
        }
    }
}
