//! File formats and batch experiments behind the command-line tool.

mod config;
mod random_map;
mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{load_map, InstanceConfig};
pub use random_map::random_map;
pub use sweep::{
    read_csv, run_sweep, write_csv, Counts, ExperimentSpec, ProfileSource, SweepResult, SweepRow,
    CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("{0}")]
    InvalidSpec(String),
    #[error("goal profile {0} is not proper (pass --allow-improper to run it anyway)")]
    Improper(String),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    States(#[from] crate::states::StatesError),
    #[error(transparent)]
    Solver(#[from] crate::solver::SolverError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
