use thiserror::Error;

pub type Result<T, E = NqpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NqpError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<NqpError>,
    },

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("model output diverged (non-finite value at row {row})")]
    ModelDiverged { row: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    LossDiverged { epoch: usize, step: usize },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("incompatible format version: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl NqpError {
    /// True for errors caused by numbers blowing up rather than by bad input.
    pub fn is_divergence(&self) -> bool {
        match self {
            NqpError::IntegrationDiverged { .. }
            | NqpError::ModelDiverged { .. }
            | NqpError::LossDiverged { .. } => true,
            NqpError::Sample { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NqpError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
