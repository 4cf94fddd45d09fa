//! `proxy-latent`: generate synthetic latent datasets, pretrain the frozen
//! attribute classifiers, train the proxy flow, evaluate both spaces and
//! edit codes.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use proxy_latent::Space;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "proxy-latent", version, about = "Supervised proxy latent space pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled dataset from the entangled synthetic world.
    GenSynthetic(GenArgs),
    /// Fit the attribute classifier bank and store it, frozen, with an identity flow.
    PretrainClassifiers(PretrainArgs),
    /// Train the flow against the frozen bank and fit SVMs in both spaces.
    TrainProxy(TrainArgs),
    /// Validation accuracy of a fresh linear SVM per attribute.
    EvalSeparability(SeparabilityArgs),
    /// Disentanglement, completeness and informativeness from Lasso importances.
    EvalDci(DciArgs),
    /// Non-target decision flips caused by hyperplane edits.
    EvalFlips(FlipArgs),
    /// Edit codes along one attribute hyperplane and write them as a dataset.
    Edit(EditArgs),
    /// Scatter plot of codes projected on two hyperplane normals (SVG).
    Plot2d(PlotArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceArg {
    Orig,
    Proxy,
}

impl SpaceArg {
    fn space(self) -> Space {
        match self {
            SpaceArg::Orig => Space::Original,
            SpaceArg::Proxy => Space::Proxy,
        }
    }
}

#[derive(Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    /// Number of binary attributes.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Magnitude of the attribute factors.
    #[arg(long, default_value_t = 0.2)]
    margin: f64,
    /// Strength of the elementwise `x + a·tanh(x)` nonlinearity.
    #[arg(long, default_value_t = 2.0)]
    entangle: f64,
    /// Pairwise correlation between attribute factors.
    #[arg(long, default_value_t = 0.3)]
    correlation: f64,
    /// Seed of the random rotation; defaults to `--seed`.
    #[arg(long)]
    rotation_seed: Option<u64>,
    /// Use the identity instead of a random rotation.
    #[arg(long)]
    axis_aligned: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Coupling layers of the stored (identity) flow.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Hidden width of the stored flow; defaults to the code dimension.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
pub struct SvmArgs {
    #[arg(long, default_value_t = 1e-3)]
    svm_lambda: f64,
    #[arg(long, default_value_t = 20)]
    svm_epochs: usize,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Model file holding the frozen bank (from `pretrain-classifiers`).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Loss log, one JSON record per batch.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda_lm: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_ap: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Sampled edit magnitudes span this multiple of the batch median distance.
    #[arg(long, default_value_t = 3.0)]
    edit_range: f64,
    /// Re-initialize the flow with this many layers instead of continuing the stored one.
    #[arg(long)]
    layers: Option<usize>,
    /// Re-initialize the flow with this hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    svm: SvmArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
pub struct SeparabilityArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Needed for the proxy space.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Evaluate one space; both when omitted and a model is given.
    #[arg(long, value_enum)]
    space: Option<SpaceArg>,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[command(flatten)]
    #[serde(flatten)]
    svm: SvmArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
pub struct DciArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    space: Option<SpaceArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Samples drawn for the fit; defaults to min(2000, N).
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    lasso_alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
pub struct FlipArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Trained model carrying SVMs for both spaces.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Edit step in distance units of the editing space.
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    alpha: f64,
    /// Only this attribute index; all when omitted.
    #[arg(long)]
    attr: Option<usize>,
    #[arg(long, value_enum)]
    space: Option<SpaceArg>,
}

#[derive(Args, Serialize)]
#[command(group = clap::ArgGroup::new("magnitude").required(true).args(["alpha", "target_dist"]))]
pub struct EditArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Edited dataset.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    attr: usize,
    /// Move every code by this signed distance.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Move every code to this signed distance.
    #[arg(long, allow_negative_numbers = true)]
    target_dist: Option<f64>,
    #[arg(long, value_enum, default_value = "proxy")]
    space: SpaceArg,
    /// Edit only the first rows.
    #[arg(long)]
    rows: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct PlotArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// SVG output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "orig")]
    space: SpaceArg,
    /// Hyperplane on the horizontal axis.
    #[arg(long, default_value_t = 0)]
    attr: usize,
    /// Hyperplane on the vertical axis.
    #[arg(long, default_value_t = 1)]
    attr_y: usize,
    /// Attribute whose label colors the points; defaults to `--attr`.
    #[arg(long)]
    color_attr: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    max_points: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let line = rendered
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!("{}", if line.starts_with("error:") { line } else { format!("error: {line}") });
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::PretrainClassifiers(a) => commands::pretrain(a),
        Command::TrainProxy(a) => commands::train(a),
        Command::EvalSeparability(a) => commands::eval_separability(a),
        Command::EvalDci(a) => commands::eval_dci(a),
        Command::EvalFlips(a) => commands::eval_flips(a),
        Command::Edit(a) => commands::edit(a),
        Command::Plot2d(a) => commands::plot2d(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
