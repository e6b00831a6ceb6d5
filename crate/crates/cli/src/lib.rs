//! Command-line front end: dispatch, voltage screening, capacitor sweeps,
//! replay validation and load-profile generation.

pub mod commands;
pub mod profiles;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use dispatch_conic::SolverStatus;

pub use commands::{run, validate_solution};
pub use report::{RunReport, SolutionFile, ValidationResiduals};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_TIGHT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_INPUT: i32 = 4;
pub const EXIT_SOLVER: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] dispatch_core::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(dispatch_core::Error::Solver(_)) => EXIT_SOLVER,
            _ => EXIT_INPUT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RunMode {
    Dispatch,
    Feasibility,
    Capsweep,
    Validate,
    GenProfiles,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Dispatch => "dispatch",
            RunMode::Feasibility => "feasibility",
            RunMode::Capsweep => "capsweep",
            RunMode::Validate => "validate",
            RunMode::GenProfiles => "gen-profiles",
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "feeder-dispatch", version, about = "Multi-period dispatch of unbalanced three-phase feeders")]
pub struct Args {
    #[arg(long, value_enum, default_value = "dispatch")]
    pub mode: RunMode,
    /// Feeder description (JSON).
    #[arg(long)]
    pub feeder: Option<PathBuf>,
    /// Scenario with prices, loads and PCC voltages (JSON).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Profile specification for gen-profiles (JSON).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Solution file to replay in validate mode; defaults to OUT/solution.json.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = dispatch_core::recovery::DEFAULT_RANK_THRESHOLD)]
    pub rank_threshold: f64,
    /// Weight of the cost term in feasibility mode; defaults to the scenario value.
    #[arg(long)]
    pub wv: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Optional constraint families: thermal, neutral, pcc-pf, node-pf.
    #[arg(long, default_value = "pcc-pf,node-pf")]
    pub enable: String,
    #[arg(long)]
    pub verbose: bool,
}

/// Exit code for a finished solve.
pub fn status_exit_code(status: SolverStatus, tight: bool) -> i32 {
    match status {
        SolverStatus::Optimal if tight => EXIT_OK,
        SolverStatus::Optimal => EXIT_NOT_TIGHT,
        SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible => EXIT_INFEASIBLE,
        SolverStatus::IterationLimit | SolverStatus::NumericalFailure => EXIT_SOLVER,
    }
}
