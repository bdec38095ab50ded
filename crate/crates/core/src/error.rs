use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum CodclError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: {message}")]
    Validation { line: u64, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown treatment kind `{0}`")]
    UnknownKind(String),

    #[error("split: {0}")]
    Split(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("non-finite value in batch {batch}: {what}")]
    NonFinite { batch: usize, what: String },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CodclError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CodclError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        CodclError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CodclError::Config(msg.into())
    }
}

pub type Result<T, E = CodclError> = std::result::Result<T, E>;
