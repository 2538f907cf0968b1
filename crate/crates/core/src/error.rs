//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("series starts with a missing value; nothing to fill forward from")]
    LeadingGap,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("series has zero range (max == min)")]
    ZeroRange,

    #[error("signal is not decomposable (too short, monotone, or without extrema)")]
    NotDecomposable,

    #[error("not enough extrema to build envelopes")]
    InsufficientExtrema,

    #[error("reference signal has zero power")]
    ZeroPower,

    #[error("only {available} eligible donors for index {index}, need {needed}")]
    InsufficientDonors {
        index: usize,
        needed: usize,
        available: usize,
    },

    #[error("degenerate fit: innovation variance is zero")]
    DegenerateFit,

    #[error("no viable model: every candidate fit diverged")]
    NoViableModel,

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    TrainingDiverged { epoch: usize },

    #[error("actual value at index {0} is zero; MAPE undefined")]
    ZeroActual(usize),

    #[error("baseline error is zero; reduction undefined")]
    ZeroBaseline,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeError(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the command-line driver: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::TrainingDiverged { .. } => 4,
            _ => 3,
        }
    }
}
