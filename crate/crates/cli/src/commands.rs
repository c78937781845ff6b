use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use texsmooth::gradsuite::{run_op_suite, run_suite, SuiteOptions};
use texsmooth::imagecore::{read_png, write_png, BitDepth, Image};
use texsmooth::metrics::{format_psnr, MetricReport};
use texsmooth::models::{
    enhance, finetune_joint, load_models, load_role, save_role, smooth, train_spn, train_tpn, train_tsafn_ablation,
    Ablation, SpnModel, TpnModel, TrainSet,
};
use texsmooth::nnkernel::{LossWeights, TrainConfig};
use texsmooth::texgen::dataset::{load_split, write_dataset, Split};
use texsmooth::texgen::{extract_texture_pattern, BlendConfig, GenConfig, Granularity, GtMode};
use texsmooth::{par, Error};

use crate::config::{write_effective, ConfigFile};
use crate::{Cli, Command, EnhanceFlags, EvalFlags, GenFlags, GradcheckFlags, SmoothFlags, TrainFlags, Which};

pub const THREADS_ENV: &str = "TEXSMOOTH_THREADS";

/// Runs one subcommand. `Ok(false)` means the command completed but a check failed.
pub fn run(cli: Cli) -> Result<bool> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed()?).unwrap_or(0);
    let out = cli.out;
    match cli.command {
        Command::Gen(f) => gen(&file, seed, out, &f),
        Command::Train(f) => train(&file, seed, out, &f),
        Command::Smooth(f) => smooth_cmd(&file, seed, out, &f),
        Command::Eval(f) => eval(&file, seed, out, &f),
        Command::Enhance(f) => enhance_cmd(&file, seed, out, &f),
        Command::Gradcheck(f) => gradcheck(&file, seed, out, &f),
    }
}

fn required(p: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    p.clone().with_context(|| format!("--{name} is required"))
}

/// Directory that receives `effective_config.json` for a file output.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be >= 1");
            }
            Ok(Some(n))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenParams {
    structures: Option<PathBuf>,
    textures: Option<PathBuf>,
    count: usize,
    kappa: f32,
    gt_mode: GtMode,
    mask_threshold: f32,
    granularity: Granularity,
}

impl Default for GenParams {
    fn default() -> Self {
        let blend = BlendConfig::default();
        Self {
            structures: None,
            textures: None,
            count: 100,
            kappa: blend.kappa,
            gt_mode: blend.gt_mode,
            mask_threshold: blend.mask_threshold,
            granularity: Granularity::default(),
        }
    }
}

fn gen(file: &ConfigFile, seed: u64, out: Option<PathBuf>, flags: &GenFlags) -> Result<bool> {
    let p: GenParams = file.resolve("gen", flags)?;
    let out = out.unwrap_or_else(|| PathBuf::from("dataset"));
    let cfg = GenConfig {
        blend: BlendConfig {
            kappa: p.kappa,
            mask_threshold: p.mask_threshold,
            gt_mode: p.gt_mode,
        },
        granularity: p.granularity,
    };
    cfg.blend.validate()?;
    if p.count == 0 {
        bail!("count must be >= 1");
    }
    let structures = png_files(&required(&p.structures, "structures")?)?
        .into_iter()
        .map(|path| Ok((file_name(&path), read_png(&path)?)))
        .collect::<Result<Vec<(String, Image)>>>()?;
    if structures.is_empty() {
        bail!("no structure PNGs found");
    }
    let mut patterns = Vec::new();
    for path in png_files(&required(&p.textures, "textures")?)? {
        match extract_texture_pattern(&read_png(&path)?, p.mask_threshold) {
            Ok(pattern) => patterns.push((file_name(&path), pattern)),
            Err(e @ Error::DegeneratePattern(_)) => warn!("skipping {}: {e}", path.display()),
            Err(e) => return Err(e).with_context(|| format!("extracting {}", path.display())),
        }
    }
    if patterns.is_empty() {
        bail!("no usable texture patterns");
    }
    write_effective(&out, "gen", seed, &out, &p)?;
    let threads = thread_limit()?;
    let manifest = par::with_max_threads(threads, || {
        write_dataset(&out, &structures, &patterns, p.count, seed, &cfg)
    })?;
    let count = |s| manifest.ids(s).count();
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        manifest.count,
        out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainParams {
    data: Option<PathBuf>,
    #[serde(flatten)]
    train: TrainConfig,
    ablation: Ablation,
    gamma: f64,
    lambda: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            data: None,
            train: TrainConfig::default(),
            ablation: Ablation::default(),
            gamma: w.gamma,
            lambda: w.lambda,
        }
    }
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(csv, "{i},{l}")?;
    }
    fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

fn train(file: &ConfigFile, seed: u64, out: Option<PathBuf>, flags: &TrainFlags) -> Result<bool> {
    let mut p: TrainParams = file.resolve("train", flags)?;
    p.train.seed = seed;
    p.train.validate()?;
    let out = out.unwrap_or_else(|| PathBuf::from("models"));
    let which = flags.which;
    let set = TrainSet::new(load_split(&required(&p.data, "data")?, Split::Train)?)?;
    // prerequisites are checked before anything is written
    let prereqs = match which {
        Which::Tsafn => Some((load_role::<TpnModel>(&out)?, load_role::<SpnModel>(&out)?)),
        _ => None,
    };
    let models = if which == Which::Joint {
        Some(load_models(&out)?)
    } else {
        None
    };
    write_effective(
        &out,
        "train",
        seed,
        &out,
        &serde_json::json!({ "which": which, "params": &p }),
    )?;
    let name = serde_json::to_value(which)?.as_str().unwrap_or_default().to_string();
    let loss_path = out.join(format!("{name}_loss.csv"));
    let last = match (which, prereqs, models) {
        (Which::Tpn, _, _) => {
            let o = train_tpn(&set, &p.train)?;
            save_role(&out, &o.model)?;
            write_losses(&loss_path, &o.losses)?;
            o.losses.last().copied()
        }
        (Which::Spn, _, _) => {
            let o = train_spn(&set, &p.train)?;
            save_role(&out, &o.model)?;
            write_losses(&loss_path, &o.losses)?;
            o.losses.last().copied()
        }
        (Which::Tsafn, Some((tpn, spn)), _) => {
            let o = train_tsafn_ablation(&set, &p.train, &tpn, &spn, p.ablation)?;
            save_role(&out, &o.model)?;
            write_losses(&loss_path, &o.losses)?;
            o.losses.last().copied()
        }
        (Which::Joint, _, Some(mut models)) => {
            let weights = LossWeights {
                gamma: p.gamma,
                lambda: p.lambda,
            };
            let history = finetune_joint(&set, &p.train, &mut models, &weights)?;
            save_role(&out, &models.tpn)?;
            save_role(&out, &models.spn)?;
            save_role(&out, &models.tsafn)?;
            let mut csv = String::from("step,total,l_d,l_t,l_e\n");
            for (i, l) in history.iter().enumerate() {
                writeln!(csv, "{i},{},{},{},{}", l.total, l.l_d, l.l_t, l.l_e)?;
            }
            fs::write(&loss_path, csv).with_context(|| format!("writing {}", loss_path.display()))?;
            history.last().map(|l| l.total)
        }
        _ => unreachable!("prerequisites are loaded for tsafn and joint"),
    };
    match last {
        Some(l) => println!("trained {name} for {} steps, final loss {l}", p.train.steps),
        None => println!("wrote initial {name} checkpoint (0 steps)"),
    }
    Ok(true)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SmoothParams {
    input: Option<PathBuf>,
    models: Option<PathBuf>,
    ablation: Ablation,
    emit_guidance: bool,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parent_dir(out).join(format!("{stem}_{suffix}.png"))
}

fn smooth_cmd(file: &ConfigFile, seed: u64, out: Option<PathBuf>, flags: &SmoothFlags) -> Result<bool> {
    let p: SmoothParams = file.resolve("smooth", flags)?;
    let out = required(&out, "out")?;
    let input = required(&p.input, "input")?;
    let models = load_models(&required(&p.models, "models")?)?;
    let img = read_png(&input)?;
    let result = smooth(&img, &models, p.ablation).with_context(|| format!("smoothing {}", input.display()))?;
    write_effective(&parent_dir(&out), "smooth", seed, &out, &p)?;
    write_png(&result.image, &out, BitDepth::Eight)?;
    if p.emit_guidance {
        write_png(&result.texture, sibling(&out, "texture"), BitDepth::Eight)?;
        write_png(&result.structure, sibling(&out, "structure"), BitDepth::Eight)?;
    }
    info!("wrote {}", out.display());
    Ok(true)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalParams {
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
}

fn eval(file: &ConfigFile, seed: u64, out: Option<PathBuf>, flags: &EvalFlags) -> Result<bool> {
    let p: EvalParams = file.resolve("eval", flags)?;
    let out = out.unwrap_or_else(|| PathBuf::from("eval.csv"));
    let pred_dir = required(&p.pred, "pred")?;
    let gt_dir = required(&p.gt, "gt")?;
    let names = |dir: &Path| -> Result<BTreeSet<String>> { Ok(png_files(dir)?.iter().map(|p| file_name(p)).collect()) };
    let pred = names(&pred_dir)?;
    let gt = names(&gt_dir)?;
    let mut warnings = 0;
    for name in pred.symmetric_difference(&gt) {
        let side = if pred.contains(name) {
            "ground truth"
        } else {
            "prediction"
        };
        warn!("{name} has no matching {side}; excluded");
        warnings += 1;
    }
    let matched: Vec<&String> = pred.intersection(&gt).collect();
    if matched.is_empty() {
        bail!("no matching prediction/ground-truth pairs");
    }
    let mut csv = String::from("sample_id,mse,psnr_db,ssim\n");
    let mut reports = Vec::with_capacity(matched.len());
    for name in matched {
        let a = read_png(pred_dir.join(name))?;
        let b = read_png(gt_dir.join(name))?;
        let r = MetricReport::compute(&a, &b).with_context(|| format!("comparing {name}"))?;
        let id = name.strip_suffix(".png").unwrap_or(name);
        writeln!(csv, "{id},{},{},{}", r.mse, format_psnr(r.psnr), r.ssim)?;
        reports.push(r);
    }
    let mean = MetricReport::mean(&reports).expect("at least one pair");
    writeln!(csv, "mean,{},{},{}", mean.mse, format_psnr(mean.psnr), mean.ssim)?;
    write_effective(&parent_dir(&out), "eval", seed, &out, &p)?;
    fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "pairs {} mse {} psnr {} ssim {} warnings {warnings}",
        reports.len(),
        mean.mse,
        format_psnr(mean.psnr),
        mean.ssim
    );
    Ok(true)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct EnhanceParams {
    input: Option<PathBuf>,
    models: Option<PathBuf>,
    alpha: f32,
    ablation: Ablation,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            input: None,
            models: None,
            alpha: 2.0,
            ablation: Ablation::default(),
        }
    }
}

fn enhance_cmd(file: &ConfigFile, seed: u64, out: Option<PathBuf>, flags: &EnhanceFlags) -> Result<bool> {
    let p: EnhanceParams = file.resolve("enhance", flags)?;
    let out = required(&out, "out")?;
    if p.alpha.is_nan() || p.alpha < 1.0 {
        return Err(Error::InvalidArgument(format!("alpha must be >= 1, got {}", p.alpha)).into());
    }
    let input = required(&p.input, "input")?;
    let models = load_models(&required(&p.models, "models")?)?;
    let img = read_png(&input)?;
    let s = smooth(&img, &models, p.ablation).with_context(|| format!("smoothing {}", input.display()))?;
    let de = enhance(&img, &s.image, p.alpha)?;
    write_effective(&parent_dir(&out), "enhance", seed, &out, &p)?;
    write_png(&de, &out, BitDepth::Eight)?;
    Ok(true)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct GradcheckParams {
    ops_only: bool,
    corrupt: Option<String>,
}

fn gradcheck(file: &ConfigFile, seed: u64, out: Option<PathBuf>, flags: &GradcheckFlags) -> Result<bool> {
    let p: GradcheckParams = file.resolve("gradcheck", flags)?;
    let out = out.unwrap_or_else(|| PathBuf::from("gradcheck"));
    write_effective(&out, "gradcheck", seed, &out, &p)?;
    let opts = SuiteOptions {
        seed,
        corrupt: p.corrupt.clone(),
    };
    let report = if p.ops_only {
        run_op_suite(&opts)
    } else {
        run_suite(&opts)
    };
    for e in &report.entries {
        let verdict = if e.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<24} {:>8} {:>7} {:.3e} {verdict}",
            e.name,
            format!("{:?}", e.kind).to_lowercase(),
            e.checked,
            e.max_rel_error
        );
    }
    let path = out.join("gradcheck.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "worst {:.3e}: {}",
        report.worst(),
        if report.passed() { "pass" } else { "fail" }
    );
    Ok(report.passed())
}
