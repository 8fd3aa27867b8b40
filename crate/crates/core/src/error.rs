use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(Vec<usize>),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("format error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Format { line: Option<usize>, message: String },

    #[error("sequence length {len} exceeds the maximum of {max}")]
    Length { len: usize, max: usize },

    #[error("distance is undefined for an empty document")]
    UndefinedDistance,

    #[error("question expansion needs a non-empty index of other products")]
    NoExpansion,

    #[error("no candidate snippets available to calibrate the threshold")]
    Calibration,

    #[error("snippet word weights are degenerate (maximum weight {0})")]
    DegenerateWeights(f64),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("maximum decoding length {0} reached")]
    MaxLength(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn format(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    /// Short stable identifier, used for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid_shape",
            Error::NumericInput(_) => "numeric_input",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::DuplicateParameter(_) => "duplicate_parameter",
            Error::UnknownParameter(_) => "unknown_parameter",
            Error::EmptyDataset => "empty_dataset",
            Error::Format { .. } => "format",
            Error::Length { .. } => "length",
            Error::UndefinedDistance => "undefined_distance",
            Error::NoExpansion => "no_expansion",
            Error::Calibration => "calibration",
            Error::DegenerateWeights(_) => "degenerate_weights",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::MaxLength(_) => "max_length",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Line number for errors tied to a position in an input file.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Format { line, .. } => *line,
            _ => None,
        }
    }
}
