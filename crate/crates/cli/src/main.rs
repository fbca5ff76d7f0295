mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fblab::verify::RefinementInstance;
use fblab::LabError;

/// Numerical laboratory for elliptic free-boundary problems.
#[derive(Parser)]
#[command(name = "fblab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write a solution bundle.
    Solve { config: PathBuf },
    /// Blow-up sequence and classification at one free-boundary point of a
    /// solved obstacle bundle.
    Blowup {
        config: PathBuf,
        /// Comma-separated coordinates, e.g. `0.5,0`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: PointArg,
        /// Largest radius; defaults to `analysis.r0`.
        #[arg(long)]
        r0: Option<f64>,
        /// Number of halvings; defaults to `analysis.levels`.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Per-point diagnostics (classification, nondegeneracy, convexity,
    /// flatness) at the configured or given points of a solved bundle.
    Classify {
        config: PathBuf,
        /// Repeatable; overrides `analysis.points`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Vec<PointArg>,
    },
    /// Run the verification suite (built-in defaults without a config).
    Verify { config: Option<PathBuf> },
    /// Convergence table over halving grid spacings.
    Refine {
        #[arg(long, value_enum)]
        instance: RefineKind,
        /// Comma-separated spacings, each half the previous, e.g. `1/32,1/64,1/128`.
        #[arg(long, value_delimiter = ',', default_value = "1/32,1/64,1/128")]
        spacings: Vec<String>,
    },
    /// Print a report written by `verify` (or any JSON report) as text.
    Report { path: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RefineKind {
    Obstacle1d,
    RadialObstacle,
    OnePhase1d,
    HalfSpaceModel,
}

impl From<RefineKind> for RefinementInstance {
    fn from(k: RefineKind) -> Self {
        match k {
            RefineKind::Obstacle1d => RefinementInstance::Obstacle1d,
            RefineKind::RadialObstacle => RefinementInstance::RadialObstacle,
            RefineKind::OnePhase1d => RefinementInstance::OnePhase1d,
            RefineKind::HalfSpaceModel => RefinementInstance::HalfSpaceModel,
        }
    }
}

#[derive(Clone, Debug)]
struct PointArg(Vec<f64>);

fn parse_point(s: &str) -> Result<PointArg, String> {
    s.split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|_| format!("bad coordinate {c:?} in {s:?}")))
        .collect::<Result<_, _>>()
        .map(PointArg)
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, unparsable or out-of-range configuration (exit 2).
    Config(String),
    /// Iteration cap reached (exit 3).
    NotConverged(String),
    /// Requested point is not on the free boundary (exit 4).
    NotOnFreeBoundary(String),
    /// Any other failure (exit 1).
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::NotOnFreeBoundary(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::NotConverged(m) | CliError::NotOnFreeBoundary(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::NotConverged { .. } => CliError::NotConverged(e.to_string()),
            LabError::NotOnFreeBoundary(_) => CliError::NotOnFreeBoundary(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config } => commands::solve(&config),
        Command::Blowup {
            config,
            point,
            r0,
            levels,
        } => commands::blowup(&config, &point.0, r0, levels),
        Command::Classify { config, point } => {
            let points: Vec<Vec<f64>> = point.into_iter().map(|p| p.0).collect();
            commands::classify(&config, &points)
        }
        Command::Verify { config } => commands::verify(config.as_deref()),
        Command::Refine { instance, spacings } => commands::refine(instance.into(), &spacings),
        Command::Report { path } => commands::report(&path),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fblab: {e}");
            ExitCode::from(e.code())
        }
    }
}
