use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("hour {0} outside [0, 24)")]
    HourOutOfRange(i64),

    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("simultaneous charge ({charge}) and discharge ({discharge}) requested")]
    SimultaneousChargeDischarge { charge: f64, discharge: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("forward cache does not belong to the current parameters")]
    StaleCache,

    #[error("index {index} out of range for observation of width {width}")]
    MaskIndex { index: usize, width: usize },

    #[error("zero price gain for {0}")]
    ZeroGain(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("non-finite loss in {0}")]
    NonFiniteLoss(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
