use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use texsmooth::models::Ablation;
use texsmooth::texgen::{Granularity, GtMode};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "texsmooth", version, about = "Learned texture-removing image smoothing")]
struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with one parameter object per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (a directory for gen, train and gradcheck; a file otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic training dataset.
    Gen(GenFlags),
    /// Train one network, or fine-tune all three jointly.
    Train(TrainFlags),
    /// Smooth one PNG with trained models.
    Smooth(SmoothFlags),
    /// Compare predicted PNGs against ground truth and write a CSV report.
    Eval(EvalFlags),
    /// Amplify the detail layer of one PNG.
    Enhance(EnhanceFlags),
    /// Check every analytic gradient against central differences.
    Gradcheck(GradcheckFlags),
}

#[derive(Debug, Args, Serialize)]
pub struct GenFlags {
    /// Directory of structure-only PNGs.
    #[arg(long)]
    structures: Option<PathBuf>,
    /// Directory of texture PNGs.
    #[arg(long)]
    textures: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    kappa: Option<f32>,
    #[arg(long, value_enum)]
    gt_mode: Option<GtModeArg>,
    #[arg(long)]
    mask_threshold: Option<f32>,
    #[arg(long, value_enum)]
    granularity: Option<GranularityArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum GtModeArg {
    Literal,
    Remapped,
}

impl From<GtModeArg> for GtMode {
    fn from(v: GtModeArg) -> Self {
        match v {
            GtModeArg::Literal => GtMode::Literal,
            GtModeArg::Remapped => GtMode::Remapped,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum GranularityArg {
    PerImage,
    PerTile,
}

impl From<GranularityArg> for Granularity {
    fn from(v: GranularityArg) -> Self {
        match v {
            GranularityArg::PerImage => Granularity::PerImage,
            GranularityArg::PerTile => Granularity::PerTile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Tpn,
    Spn,
    Tsafn,
    Joint,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    #[arg(value_enum)]
    #[serde(skip)]
    which: Which,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    finetune_learning_rate: Option<f64>,
    /// Guidance channels fed to the filter while training tsafn.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SmoothFlags {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory holding `models.json` and the checkpoints.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Also write the guidance maps next to the output.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    emit_guidance: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalFlags {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EnhanceFlags {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    ablation: Option<Ablation>,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckFlags {
    /// Skip the end-to-end network checks.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    ops_only: bool,
    /// Perturb the analytic gradient of one component (negative control).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
