use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ltv_core::{Method, Route};

#[derive(Debug, Parser)]
#[command(
    name = "ltvdetect",
    version,
    about = "Dichotomy, observability and detectability analysis of linear time-varying systems"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Fixed integration step (default: 1e-3 / bound of A).
    #[arg(long, global = true)]
    pub step: Option<f64>,
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub rtol: f64,
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub atol: f64,
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Rk4)]
    pub method: MethodArg,
    /// Analysis horizon (default: the system file's horizon, else 60).
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Directory for report.json and CSV curves.
    #[arg(long, global = true, env = "LTVDETECT_OUT_DIR", default_value = "ltvdetect-out")]
    pub out_dir: PathBuf,
    /// Seed for randomized checks; recorded in every report.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the bundled example systems into DIR.
    #[arg(long, value_name = "DIR")]
    pub examples: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rk4,
    Adaptive,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Adaptive => Method::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Triangular,
    Diagonal,
}

impl From<RouteArg> for Route {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Triangular => Route::Triangular,
            RouteArg::Diagonal => Route::Diagonal,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// System definition file (TOML).
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Name of a bundled example system.
    #[arg(long)]
    pub example: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Continuous QR flow: ν(t), diag B(t) and orthogonality residuals.
    Qr {
        #[command(flatten)]
        source: Source,
    },
    /// Certify an exponential dichotomy of rank k.
    Dichotomy {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 20)]
        starts: usize,
        #[arg(long, value_delimiter = ',', default_values_t = ltv_core::dichotomy::DEFAULT_LAGS)]
        lags: Vec<f64>,
        #[arg(long, default_value_t = ltv_core::dichotomy::DEFAULT_TOLERANCE)]
        tol: f64,
    },
    /// Observability Gramians and uniform complete observability.
    Gramian {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0])]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = ltv_core::gramian::DEFAULT_STARTS)]
        starts: usize,
        #[arg(long)]
        threshold: Option<f64>,
        /// Random bounded output injections L to compare (A, C) with (A - LC, C).
        #[arg(long, default_value_t = 0)]
        injection_trials: usize,
    },
    /// Reduce a (triangularized) system to block-diagonal form.
    Reduce {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Filter Riccati observer and certified error decay.
    Observe {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Full detectability analysis.
    Analyze {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value_t = RouteArg::Triangular)]
        route: RouteArg,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0])]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = ltv_core::dichotomy::DEFAULT_TOLERANCE)]
        tol: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Qr { .. } => "qr",
            Command::Dichotomy { .. } => "dichotomy",
            Command::Gramian { .. } => "gramian",
            Command::Reduce { .. } => "reduce",
            Command::Observe { .. } => "observe",
            Command::Analyze { .. } => "analyze",
        }
    }

    pub fn source(&self) -> &Source {
        match self {
            Command::Qr { source }
            | Command::Dichotomy { source, .. }
            | Command::Gramian { source, .. }
            | Command::Reduce { source, .. }
            | Command::Observe { source, .. }
            | Command::Analyze { source, .. } => source,
        }
    }
}
