//! `mst`: simulate CASSI snapshots, train and run the reconstructor, and
//! audit the network.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mst_core::cassi::Noise;
use mst_core::MstError;

#[derive(Debug, Parser)]
#[command(name = "mst", version, about = "Mask-guided spectral-wise transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a measurement from a scene and a coded aperture.
    Simulate(SimulateArgs),
    /// Train a model on synthetic or supplied scenes.
    Train(TrainArgs),
    /// Reconstruct a cube from a measurement.
    Reconstruct(ReconstructArgs),
    /// Per-channel PSNR and SSIM of a prediction against ground truth.
    Eval(EvalArgs),
    /// Parameter and FLOP audit of a configuration.
    Count(CountArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Grayscale channel images and a spectral curve.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct SceneSource {
    /// Scene cube (HSIT, H×W×N).
    #[arg(long, conflicts_with = "synthetic")]
    scene: Option<PathBuf>,
    /// Seed of a generated scene.
    #[arg(long)]
    synthetic: Option<u64>,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 28)]
    bands: usize,
}

#[derive(Debug, Args)]
struct MaskSource {
    /// Coded aperture (HSIT, H×W).
    #[arg(long, conflicts_with = "random_mask")]
    mask: Option<PathBuf>,
    /// Seed of a random binary aperture.
    #[arg(long)]
    random_mask: Option<u64>,
    /// Open fraction of a random aperture.
    #[arg(long, default_value_t = 0.5)]
    density: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scene: SceneSource,
    #[command(flatten)]
    mask: MaskSource,
    /// Dispersion step in pixels per band.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// none | gaussian:SIGMA | shot:BITS
    #[arg(long, default_value = "none")]
    noise: Noise,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Preset name, or a key = value config file.
    #[arg(long, default_value = "toy")]
    config: String,
    #[command(flatten)]
    scene: SceneSource,
    #[command(flatten)]
    mask: MaskSource,
    #[arg(long, default_value_t = 100)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Square patch edge; defaults to the scene height.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long, default_value_t = 4e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the initial weights.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value = "none")]
    noise: Noise,
    #[arg(long, default_value_t = 1.0)]
    lambda_scl: f64,
    /// Resume from these weights instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// CSV loss log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Save weights every N steps next to `--out`.
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Final weights.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
}

#[derive(Debug, Args)]
struct CountArgs {
    /// Preset name, or a key = value config file.
    #[arg(long, default_value = "mst-s")]
    config: String,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Count two FLOPs per multiply-accumulate instead of one.
    #[arg(long)]
    two_per_mac: bool,
    /// Print the per-component breakdown.
    #[arg(long)]
    breakdown: bool,
    /// PARAMS,FLOPS,TOL gate, e.g. 0.93e6,12.96e9,0.1
    #[arg(long)]
    expect: Option<String>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Suite name, or `all`.
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    cube: PathBuf,
    /// Comma-separated channel indices.
    #[arg(long, value_delimiter = ',')]
    channels: Vec<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Pixel X,Y of the spectral curve.
    #[arg(long)]
    spectral_at: Option<String>,
    /// Reference cube for the curve correlation.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
}

/// Failure of a verb, mapped to the process exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Gate(String),
}

impl From<MstError> for Failure {
    fn from(e: MstError) -> Self {
        match e {
            MstError::Config(_) | MstError::Unsupported(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Eval(a) => commands::eval(a),
        Command::Count(a) => commands::count(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Gate(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
    }
}
