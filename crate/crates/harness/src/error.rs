use std::path::PathBuf;

use ies_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("profile file lacks column {0:?}")]
    MissingColumn(String),
    #[error("profile file has {0} data rows; expected a positive multiple of 24")]
    RowCount(usize),
    #[error("row {row}, column {column}: {value:?} is not a finite number")]
    BadValue { row: usize, column: String, value: String },
    #[error("row {row}: hour column reads {got}, expected {expected}")]
    HourOrder { row: usize, expected: usize, got: String },
    #[error("config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no checkpoint at {0}; run `ies train` for this mode first")]
    MissingCheckpoint(PathBuf),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
