//! `sketchlidar` command-line front end.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags or flag
//! values) and 2 for data errors (unreadable, corrupt or inconsistent input).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchlidar::detection::{DofMode, StatScaling, DEFAULT_MIN_PHOTONS};

#[derive(Debug, Parser)]
#[command(
    name = "sketchlidar",
    version,
    about = "Sketch-based detection and depth estimation for single-photon lidar"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress a photon file into a sketch file in one streaming pass.
    Sketch {
        #[arg(long)]
        input: PathBuf,
        /// Number of frequencies kept per pixel.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u16).range(1..))]
        m: u16,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-pixel surface detection with an optional TV-regularized map.
    Detect(DetectArgs),
    /// Depth and intensity for every detected pixel.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment described by a JSON spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-pixel wall-clock cost of the sketch path against the K-S baseline.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build a photon file from `pixel_x,pixel_y,timestamp` CSV rows.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        /// Histogram length `T`.
        #[arg(long = "T", alias = "bins")]
        bins: u32,
        #[arg(long, default_value_t = 1)]
        bin_width_ps: u32,
        /// Drop invalid rows (reported on stderr) instead of aborting.
        #[arg(long)]
        skip_invalid: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a photon file as `pixel_x,pixel_y,timestamp` CSV rows.
    Dump {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DofArg {
    Scaled2m,
    Paper,
}

impl From<DofArg> for DofMode {
    fn from(d: DofArg) -> Self {
        match d {
            DofArg::Scaled2m => DofMode::Scaled2m,
            DofArg::Paper => DofMode::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScalingArg {
    Scaled,
    Raw,
}

impl From<ScalingArg> for StatScaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Scaled => StatScaling::Scaled,
            ScalingArg::Raw => StatScaling::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Hist,
    Ks,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightsArg {
    Identity,
    Precision,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and nonnegative"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and positive"))
    }
}

/// Options shared by every command that runs the per-pixel test.
#[derive(Debug, Args)]
struct TestArgs {
    /// Significance level.
    #[arg(long, default_value_t = 0.05, value_parser = unit_interval)]
    beta: f64,
    #[arg(long, value_enum, default_value_t = DofArg::Scaled2m)]
    dof_mode: DofArg,
    #[arg(long, value_enum, default_value_t = ScalingArg::Scaled)]
    scaling: ScalingArg,
    /// Pixels with fewer photons are reported as insufficient data.
    #[arg(long, default_value_t = DEFAULT_MIN_PHOTONS)]
    min_photons: u64,
    /// Sketch size. Photon-file input is sketched at this size; sketch-file
    /// input is truncated to it. Defaults to 10 or the file's size.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    m: Option<u16>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Sketch file, or photon file (required with --baseline).
    #[arg(long)]
    input: PathBuf,
    /// Binary PGM map.
    #[arg(long)]
    output: PathBuf,
    /// Per-pixel results; defaults to the map path with a `.csv` extension.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    test: TestArgs,
    /// TV weight; 0 gives the per-pixel map.
    #[arg(long, default_value_t = 0.0, value_parser = nonnegative)]
    tv_tau: f64,
    #[arg(long, default_value_t = 200)]
    tv_iters: usize,
    #[arg(long, default_value_t = 1e-6, value_parser = nonnegative)]
    tv_tol: f64,
    /// Full-data test in place of the sketch test.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Coarse bin count `T_r` for `--baseline hist`.
    #[arg(long, default_value_t = 100)]
    coarse_bins: u32,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("irf_source").required(true).args(["irf", "irf_sigma"])))]
struct EstimateArgs {
    /// Sketch file or photon file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Impulse response as `T` whitespace- or comma-separated values.
    #[arg(long)]
    irf: Option<PathBuf>,
    /// Circular Gaussian impulse response of this width in bins, centred
    /// at bin 0.
    #[arg(long, value_parser = positive)]
    irf_sigma: Option<f64>,
    #[command(flatten)]
    test: TestArgs,
    #[arg(long, value_enum, default_value_t = WeightsArg::Precision)]
    weights: WeightsArg,
    /// Matched-filter initialization grid size.
    #[arg(long)]
    grid_points: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
