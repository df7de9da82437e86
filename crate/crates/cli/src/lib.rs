//! Command-line front end for `h2mm-core`.
//!
//! Exit codes: 0 success, 1 domain error (including failed validation or
//! constraint checks), 2 I/O or parse error, 3 iteration limit reached
//! without convergence.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod files;
pub mod points;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Domain(_) => 1,
            Self::Io(_) | Self::Parse(_) => 2,
        }
    }
}

impl From<h2mm_core::Error> for CliError {
    fn from(e: h2mm_core::Error) -> Self {
        match e {
            h2mm_core::Error::Io(e) => Self::Io(e.to_string()),
            h2mm_core::Error::Parse(m) => Self::Parse(m),
            other => Self::Domain(other.to_string()),
        }
    }
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_DOMAIN: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "h2mm", version, about = "H2-optimal model reduction by moment matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the H2 norm of a stable system.
    H2norm(H2normArgs),
    /// Compute a reduced model and write it with a run report.
    Reduce(ReduceArgs),
    /// Check a reduced model's interpolation conditions and stability.
    Validate(ValidateArgs),
    /// Reduce over a range of orders and point strategies into a CSV table.
    Sweep(SweepArgs),
    /// Write an SDP relaxation in SDPA sparse format.
    ExportSdp(ExportSdpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Convention {
    Normalized,
    Unnormalized,
}

#[derive(Debug, Args)]
pub struct H2normArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, value_enum, default_value = "normalized")]
    pub convention: Convention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Kkt,
    Grad,
    Sdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Frozen,
    Refresh,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub order: usize,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub problem: u8,
    #[arg(long, value_enum, default_value = "grad")]
    pub method: Method,
    /// Comma-separated points; repeats are multiplicities, complex points
    /// are written `re±imj` and need their conjugates.
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    /// One tangent vector per distinct point, e.g. `1,0;0,1`.
    #[arg(long, allow_hyphen_values = true)]
    pub tangents: Option<String>,
    #[arg(long, value_enum, default_value = "refresh")]
    pub mode: Mode,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Gradient tolerance (grad) or KKT residual tolerance (kkt).
    #[arg(long)]
    pub tol: Option<f64>,
    /// `armijo` or `fixed:ALPHA`.
    #[arg(long, default_value = "armijo")]
    pub step: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long)]
    pub positive: bool,
    /// Initial G, row-major and comma-separated; pole placement otherwise.
    #[arg(long, allow_hyphen_values = true)]
    pub g0: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report path; printed to standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Inclusive range `A..B`.
    #[arg(long)]
    pub orders: String,
    /// `dense:H`, `rare:H` or `list:FILE`; may be repeated.
    #[arg(long = "points-strategy", required = true)]
    pub strategies: Vec<String>,
    #[arg(long, value_enum, default_value = "grad")]
    pub method: Method,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportSdpArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub problem: u8,
    #[arg(long)]
    pub order: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub points: String,
    #[arg(long, allow_hyphen_values = true)]
    pub tangents: Option<String>,
    #[arg(long)]
    pub positive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::H2norm(a) => commands::h2norm(&a),
        Command::Reduce(a) => commands::reduce(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::ExportSdp(a) => commands::export_sdp(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
