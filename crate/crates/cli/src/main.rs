//! `ppcov`: estimate, test and simulate covariate-driven Poisson intensity
//! models from ASCII-grid rasters and CSV point patterns.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppcov::{Kernel1D, Kernel2D};
use serde::{Deserialize, Serialize};

use crate::config::{BandKindName, DEFAULT_GRID_CELLS};

#[derive(Parser, Debug)]
#[command(
    name = "ppcov",
    version,
    about = "Goodness-of-fit testing for covariate intensity models of Poisson point patterns"
)]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the spatial and covariate relative-density surfaces.
    Fit(FitArgs),
    /// Run the bootstrap test, optionally over a range of pilot bandwidths.
    Test(TestArgs),
    /// Run a Monte Carlo power study described by a TOML file.
    Power(PowerArgs),
    /// Draw Poisson patterns from a base intensity with an optional band.
    Simulate(SimulateArgs),
    /// Print the rule-of-thumb bandwidths for a pattern.
    Bandwidth(InputArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelName {
    pub fn kernels(self) -> (Kernel2D, Kernel1D) {
        match self {
            KernelName::Gaussian => (Kernel2D::Gaussian, Kernel1D::Gaussian),
            KernelName::Epanechnikov => (Kernel2D::Epanechnikov, Kernel1D::Epanechnikov),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EdgeName {
    #[default]
    Diggle,
    None,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InputArgs {
    /// Covariate raster (ESRI ASCII grid).
    #[arg(long)]
    pub covariate: PathBuf,
    /// Point pattern CSV with header `x,y`.
    #[arg(long, alias = "pattern")]
    pub points: PathBuf,
    /// Window mask raster; nonzero cells are inside.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Mesh cells along the longer side of the window.
    #[arg(long, default_value_t = DEFAULT_GRID_CELLS)]
    pub grid_cells: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SmoothingArgs {
    #[arg(long, value_enum, default_value_t = KernelName::Gaussian)]
    pub kernel: KernelName,
    /// Spatial bandwidth matrix `h11,h12,h22`; selected from the data when absent.
    #[arg(long = "H", value_parser = config::parse_triplet)]
    #[serde(rename = "H")]
    pub h: Option<[f64; 3]>,
    /// Covariate bandwidth; selected from the data when absent.
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, value_enum, default_value_t = EdgeName::Diggle)]
    pub edge: EdgeName,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Pilot bandwidth `t` or range `start:stop:step`.
    #[arg(long)]
    pilot_t: Option<String>,
    /// Bootstrap resamples.
    #[arg(long = "B", default_value_t = ppcov::goftest::DEFAULT_REPLICATES)]
    replicates: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the observed bandwidths on bootstrap patterns.
    #[arg(long)]
    no_reselect: bool,
    /// Also report the normal approximation.
    #[arg(long)]
    asymptotic: bool,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; a JSON sidecar with the same stem is written alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Covariate raster; the unit square with `Z(x, y) = x` when absent.
    #[arg(long)]
    covariate: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Base intensity raster.
    #[arg(long, conflicts_with = "rho")]
    intensity: Option<PathBuf>,
    /// Base intensity `intercept,slope` linear in the covariate.
    #[arg(long, value_parser = config::parse_pair)]
    rho: Option<[f64; 2]>,
    /// Expected number of events per pattern.
    #[arg(long)]
    m: f64,
    #[arg(long, value_enum)]
    band: Option<BandKindName>,
    /// Band scale; required with `--band`.
    #[arg(long)]
    d: Option<f64>,
    #[arg(long, value_parser = config::parse_pair)]
    center: Option<[f64; 2]>,
    #[arg(long, value_parser = config::parse_pair)]
    direction: Option<[f64; 2]>,
    #[arg(long)]
    offset: Option<f64>,
    /// Number of patterns.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_GRID_CELLS)]
    grid_cells: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<ppcov::Error> for CliError {
    fn from(e: ppcov::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<String> for CliError {
    fn from(e: String) -> Self {
        CliError::Input(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(a) => commands::fit(&a.input, &a.smoothing, &a.out),
        Command::Test(a) => commands::test(commands::TestOptions {
            input: a.input,
            smoothing: a.smoothing,
            pilot_t: a.pilot_t,
            replicates: a.replicates,
            seed: a.seed,
            reselect: !a.no_reselect,
            asymptotic: a.asymptotic,
            out: a.out,
        }),
        Command::Power(a) => commands::power(&a.config, a.seed, &a.out),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Bandwidth(a) => commands::bandwidth(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(0) => Err(CliError::Input("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::Input(format!("cannot start {n} workers: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
