use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),

    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),

    #[error("frequency grids do not match")]
    GridMismatch,

    #[error("underdetermined tap fit: {taps} taps from {samples} frequency samples")]
    Underdetermined { taps: usize, samples: usize },

    #[error("degenerate end tap while extracting section {}", section.map_or_else(|| "?".to_string(), |s| s.to_string()))]
    DegenerateSection { section: Option<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimizer diverged at iteration {iteration}{}", step.map_or_else(String::new, |k| format!(" (time step {k})")))]
    Divergence { iteration: usize, step: Option<usize> },

    #[error("series are not aligned: {0}")]
    Misaligned(String),

    #[error("malformed record in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
