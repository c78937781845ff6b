//! Batch kernels with and without the `parallel` feature. Run once with the
//! default features and once with `--no-default-features`; both runs report
//! under the same groups, with the build mode as the benchmark id.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use texsmooth::imagecore::{image_to_tensor, Tensor};
use texsmooth::models::{tsafn_input, TpnConfig, TpnModel, TsafnConfig, TsafnModel};
use texsmooth::nnkernel::{conv2d_backward, conv2d_forward, mse_loss, ConvSpec};
use texsmooth::{par, toy};

fn mode() -> &'static str {
    if par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_vec(
        n,
        c,
        h,
        w,
        (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = ConvSpec::new(3, 16, 16, 1);
    let (o, i, kh, kw) = spec.weight_shape();
    let x = random(&mut rng, 16, 16, 64, 64);
    let w = random(&mut rng, o, i, kh, kw);
    let b = random(&mut rng, 1, o, 1, 1);
    let y = conv2d_forward(&x, &spec, &w, &b).unwrap();
    let g = random(&mut rng, y.n(), y.c(), y.h(), y.w());

    let mut group = c.benchmark_group("conv3x3_16ch_b16_64px");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("forward", mode()), |bn| {
        bn.iter(|| conv2d_forward(black_box(&x), &spec, &w, &b).unwrap())
    });
    group.bench_function(BenchmarkId::new("backward", mode()), |bn| {
        bn.iter(|| conv2d_backward(black_box(&x), &spec, &w, &g).unwrap())
    });
    group.finish();
}

fn networks(c: &mut Criterion) {
    let samples = toy::dataset(8, 64, 3).unwrap();
    let inputs: Vec<_> = samples.iter().map(|s| s.input.clone()).collect();
    let x = image_to_tensor(&inputs).unwrap();
    let gt = image_to_tensor(&samples.iter().map(|s| s.structure_only.clone()).collect::<Vec<_>>()).unwrap();
    let tpn = TpnModel::new(TpnConfig::default(), 1).unwrap();
    let tsafn = TsafnModel::new(TsafnConfig::default(), 1).unwrap();
    let half = Tensor::full(8, 1, 64, 64, 0.5);
    let xin = tsafn_input(&x, &half, &half).unwrap();

    let mut group = c.benchmark_group("networks_b8_64px");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("tpn_forward", mode()), |bn| {
        bn.iter(|| tpn.forward(black_box(&x)).unwrap())
    });
    group.bench_function(BenchmarkId::new("tsafn_step", mode()), |bn| {
        bn.iter(|| {
            let cache = tsafn.forward_cached(black_box(&xin)).unwrap();
            let (_, grad) = mse_loss(&cache.output, &gt).unwrap();
            tsafn.backward(&cache, &grad).unwrap()
        })
    });
    group.finish();
}

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("toy_dataset_16x64px");
    group.sample_size(10);
    group.bench_function(BenchmarkId::from_parameter(mode()), |bn| {
        bn.iter(|| toy::dataset(16, 64, black_box(5)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, conv, networks, generation);
criterion_main!(benches);
