use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the fusion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Raster { path: PathBuf, message: String },
    #[error("grid: {0}")]
    Grid(String),
    #[error("cell ({row}, {col}) contains features of more than one class: {classes}")]
    LabelConflict { row: usize, col: usize, classes: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("report: {0}")]
    Report(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
