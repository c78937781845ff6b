//! Finite-difference verification of every differentiable op and of the
//! three networks end to end, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imagecore::Tensor;
use crate::models::{
    tsafn_input, SpnConfig, SpnModel, TpnConfig, TpnModel, TsafnConfig, TsafnModel, SPN_STAGES, TSAFN_IN_CHANNELS,
};
use crate::nnkernel::{
    activation_backward, activation_forward, concat_channels, conv2d_backward, conv2d_forward, max_relative_error,
    mse_loss, numeric_gradient, resize_bilinear_backward, resize_bilinear_layer, split_channels, weighted_bce_loss,
    Activation, ConvSpec, ModelParams,
};

/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Central-difference step for elementwise ops, losses and networks.
pub const GRADCHECK_EPS: f64 = 1e-5;
/// Central-difference step for convolutions, which are linear in each argument.
pub const GRADCHECK_CONV_EPS: f64 = 1e-3;
/// Spatial size of the network checks.
pub const NETWORK_CHECK_SIZE: usize = 8;

pub const OP_NAMES: [&str; 10] = [
    "conv2d_3x3",
    "conv2d_3x3_stride2",
    "conv2d_1x1",
    "relu",
    "sigmoid",
    "concat_channels",
    "resize_bilinear_down",
    "resize_bilinear_up",
    "mse_loss",
    "weighted_bce_loss",
];
pub const NETWORK_NAMES: [&str; 3] = ["tpn", "spn", "tsafn"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Op,
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub kind: ComponentKind,
    /// Number of checked coordinates (parameters and inputs).
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradcheckEntry::passed)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

/// Suite options. `corrupt` names a component whose analytic gradient is
/// perturbed before comparison; it exists to prove the suite can fail.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub corrupt: Option<String>,
}

struct Runner {
    opts: SuiteOptions,
    entries: Vec<GradcheckEntry>,
}

impl Runner {
    fn check(
        &mut self,
        name: &str,
        kind: ComponentKind,
        x0: &[f64],
        mut analytic: Vec<f64>,
        f: impl FnMut(&[f64]) -> f64,
    ) {
        if self.opts.corrupt.as_deref() == Some(name) {
            let g = &mut analytic[0];
            *g += 1e-2 * (1.0 + g.abs());
        }
        let eps = if name.starts_with("conv2d") {
            GRADCHECK_CONV_EPS
        } else {
            GRADCHECK_EPS
        };
        let numeric = numeric_gradient(f, x0, eps);
        self.entries.push(GradcheckEntry {
            name: name.to_string(),
            kind,
            checked: x0.len(),
            max_rel_error: max_relative_error(&analytic, &numeric),
        });
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..n * c * h * w).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(n, c, h, w, data).expect("shape")
}

fn like(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    let (n, c, h, w) = t.shape();
    Tensor::from_vec(n, c, h, w, data.to_vec()).expect("shape")
}

/// Splits a flat coordinate vector into consecutive tensors shaped like `parts`.
fn unpack(parts: &[&Tensor<f64>], flat: &[f64]) -> Vec<Tensor<f64>> {
    let mut off = 0;
    parts
        .iter()
        .map(|t| {
            let out = like(t, &flat[off..off + t.len()]);
            off += t.len();
            out
        })
        .collect()
}

fn pack(parts: &[&Tensor<f64>]) -> Vec<f64> {
    parts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn conv_case(r: &mut Runner, rng: &mut ChaCha8Rng, name: &str, spec: ConvSpec, h: usize, w: usize) {
    let x = uniform(rng, 2, spec.in_channels, h, w, -1.0, 1.0);
    let (o, i, k, _) = spec.weight_shape();
    let wt = uniform(rng, o, i, k, k, -0.5, 0.5);
    let b = uniform(rng, o, 1, 1, 1, -0.5, 0.5);
    let y = conv2d_forward(&x, &spec, &wt, &b).expect("conv");
    let proj = uniform(rng, y.n(), y.c(), y.h(), y.w(), -1.0, 1.0);
    let g = conv2d_backward(&x, &spec, &wt, &proj).expect("conv backward");
    let analytic = pack(&[&g.grad_x, &g.grad_w, &g.grad_b]);
    let x0 = pack(&[&x, &wt, &b]);
    r.check(name, ComponentKind::Op, &x0, analytic, |v| {
        let t = unpack(&[&x, &wt, &b], v);
        conv2d_forward(&t[0], &spec, &t[1], &t[2]).expect("conv").dot(&proj)
    });
}

fn run_ops(r: &mut Runner, rng: &mut ChaCha8Rng) {
    conv_case(r, rng, OP_NAMES[0], ConvSpec::new(3, 2, 3, 1), 5, 6);
    conv_case(r, rng, OP_NAMES[1], ConvSpec::new(3, 2, 3, 2), 7, 6);
    conv_case(r, rng, OP_NAMES[2], ConvSpec::new(1, 3, 2, 1), 4, 5);

    // keep ReLU inputs away from the kink
    let mut x = uniform(rng, 2, 2, 4, 4, 0.1, 1.0);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        if i % 2 == 0 {
            *v = -*v;
        }
    }
    for (name, kind) in [(OP_NAMES[3], Activation::Relu), (OP_NAMES[4], Activation::Sigmoid)] {
        let proj = uniform(rng, 2, 2, 4, 4, -1.0, 1.0);
        let y = activation_forward(&x, kind);
        let saved = if kind == Activation::Relu { &x } else { &y };
        let analytic = activation_backward(kind, saved, &proj).expect("activation");
        r.check(name, ComponentKind::Op, x.data(), analytic.into_data(), |v| {
            activation_forward(&like(&x, v), kind).dot(&proj)
        });
    }

    let a = uniform(rng, 2, 2, 3, 3, -1.0, 1.0);
    let b = uniform(rng, 2, 1, 3, 3, -1.0, 1.0);
    let proj = uniform(rng, 2, 3, 3, 3, -1.0, 1.0);
    let parts = split_channels(&proj, &[2, 1]).expect("split");
    r.check(
        OP_NAMES[5],
        ComponentKind::Op,
        &pack(&[&a, &b]),
        pack(&[&parts[0], &parts[1]]),
        |v| {
            let t = unpack(&[&a, &b], v);
            concat_channels(&[&t[0], &t[1]]).expect("concat").dot(&proj)
        },
    );

    for (name, (ih, iw), (oh, ow)) in [(OP_NAMES[6], (8, 7), (4, 3)), (OP_NAMES[7], (3, 4), (8, 9))] {
        let x = uniform(rng, 1, 2, ih, iw, -1.0, 1.0);
        let proj = uniform(rng, 1, 2, oh, ow, -1.0, 1.0);
        let analytic = resize_bilinear_backward(&proj, ih, iw).expect("resize backward");
        r.check(name, ComponentKind::Op, x.data(), analytic.into_data(), |v| {
            resize_bilinear_layer(&like(&x, v), oh, ow).expect("resize").dot(&proj)
        });
    }

    let pred = uniform(rng, 2, 3, 4, 4, 0.0, 1.0);
    let gt = uniform(rng, 2, 3, 4, 4, 0.0, 1.0);
    let (_, g) = mse_loss(&pred, &gt).expect("mse");
    r.check(OP_NAMES[8], ComponentKind::Op, pred.data(), g.into_data(), |v| {
        mse_loss(&like(&pred, v), &gt).expect("mse").0
    });

    let pred = uniform(rng, 2, 1, 4, 4, 0.05, 0.95);
    let labels = (0..pred.len())
        .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
        .collect::<Vec<_>>();
    let gt = like(&pred, &labels);
    let (_, g) = weighted_bce_loss(&pred, &gt).expect("bce");
    r.check(OP_NAMES[9], ComponentKind::Op, pred.data(), g.into_data(), |v| {
        weighted_bce_loss(&like(&pred, v), &gt).expect("bce").0
    });
}

/// Flat coordinates `[params…, input…]` of a network check.
fn with_params(params: &ModelParams<f64>, input: &Tensor<f64>) -> Vec<f64> {
    let mut v = params.flatten();
    v.extend_from_slice(input.data());
    v
}

fn flat_grads(grads: &[Tensor<f64>], g_input: &Tensor<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    v.extend_from_slice(g_input.data());
    v
}

fn run_networks(r: &mut Runner, rng: &mut ChaCha8Rng, seed: u64) {
    let s = NETWORK_CHECK_SIZE;

    let tpn: TpnModel<f64> = TpnModel::<f32>::new(TpnConfig::default(), seed).expect("tpn").cast();
    let x = uniform(rng, 1, 3, s, s, 0.0, 1.0);
    let proj = uniform(rng, 1, 1, s, s, -1.0, 1.0);
    let cache = tpn.forward_cached(&x).expect("tpn");
    let (grads, gx) = tpn.backward(&cache, &proj).expect("tpn backward");
    let np = tpn.params.count();
    let mut probe = tpn.clone();
    r.check(
        "tpn",
        ComponentKind::Network,
        &with_params(&tpn.params, &x),
        flat_grads(&grads, &gx),
        |v| {
            probe.params.unflatten(&v[..np]);
            probe.forward(&like(&x, &v[np..])).expect("tpn").dot(&proj)
        },
    );

    let spn: SpnModel<f64> = SpnModel::<f32>::new(SpnConfig::default(), seed).expect("spn").cast();
    let x = uniform(rng, 1, 3, s, s, 0.0, 1.0);
    let gt = Tensor::from_vec(
        1,
        1,
        s,
        s,
        (0..s * s).map(|_| if rng.gen_bool(0.25) { 1.0 } else { 0.0 }).collect(),
    )
    .expect("shape");
    let spn_objective = |out: &crate::models::SpnOutput<f64>| {
        let mut total = 0.0;
        let mut side_grads = Vec::with_capacity(SPN_STAGES);
        for side in &out.sides {
            let (l, g) = weighted_bce_loss(side, &gt).expect("bce");
            total += l;
            side_grads.push(g);
        }
        let (l, g) = weighted_bce_loss(&out.fused, &gt).expect("bce");
        (total + l, side_grads, g)
    };
    let cache = spn.forward_cached(&x).expect("spn");
    let (_, side_grads, fused_grad) = spn_objective(&cache.output);
    let (grads, gx) = spn.backward(&cache, &side_grads, &fused_grad).expect("spn backward");
    let np = spn.params.count();
    let mut probe = spn.clone();
    r.check(
        "spn",
        ComponentKind::Network,
        &with_params(&spn.params, &x),
        flat_grads(&grads, &gx),
        |v| {
            probe.params.unflatten(&v[..np]);
            spn_objective(&probe.forward(&like(&x, &v[np..])).expect("spn")).0
        },
    );

    let tsafn: TsafnModel<f64> = TsafnModel::<f32>::new(TsafnConfig::default(), seed)
        .expect("tsafn")
        .cast();
    let img = uniform(rng, 1, 3, s, s, 0.0, 1.0);
    let e = uniform(rng, 1, 1, s, s, 0.0, 1.0);
    let t = uniform(rng, 1, 1, s, s, 0.0, 1.0);
    let x = tsafn_input(&img, &e, &t).expect("tsafn input");
    debug_assert_eq!(x.c(), TSAFN_IN_CHANNELS);
    let proj = uniform(rng, 1, 3, s, s, -1.0, 1.0);
    let cache = tsafn.forward_cached(&x).expect("tsafn");
    let (grads, gx) = tsafn.backward(&cache, &proj).expect("tsafn backward");
    let np = tsafn.params.count();
    let mut probe = tsafn.clone();
    r.check(
        "tsafn",
        ComponentKind::Network,
        &with_params(&tsafn.params, &x),
        flat_grads(&grads, &gx),
        |v| {
            probe.params.unflatten(&v[..np]);
            probe.forward(&like(&x, &v[np..])).expect("tsafn").dot(&proj)
        },
    );
}

/// Runs every op check, then every network check.
pub fn run_suite(opts: &SuiteOptions) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut r = Runner {
        opts: opts.clone(),
        entries: Vec::new(),
    };
    run_ops(&mut r, &mut rng);
    run_networks(&mut r, &mut rng, opts.seed);
    GradcheckReport { entries: r.entries }
}

/// Runs only the op checks.
pub fn run_op_suite(opts: &SuiteOptions) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut r = Runner {
        opts: opts.clone(),
        entries: Vec::new(),
    };
    run_ops(&mut r, &mut rng);
    GradcheckReport { entries: r.entries }
}
