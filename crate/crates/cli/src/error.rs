use formula_distill_core::datagen::DataError;
use formula_distill_core::history::HistoryError;
use formula_distill_core::rl::corpus::CollectError;
use formula_distill_model::ModelError;
use serde_json::json;
use thiserror::Error;

/// Failure classes; each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON object written to stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind(), "code": self.exit_code(), "message": self.to_string() }).to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(_) | DataError::UnknownBenchmark(_) => CliError::Config(e.to_string()),
            DataError::Io(_) | DataError::Json(_) | DataError::Format(_) => CliError::Io(e.to_string()),
            DataError::NonFinite(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<HistoryError> for CliError {
    fn from(e: HistoryError) -> Self {
        match e {
            HistoryError::Data(d) => d.into(),
            HistoryError::Fit(_) => CliError::Runtime(e.to_string()),
            // Every other variant means the corpus file itself is unreadable or malformed.
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<CollectError> for CliError {
    fn from(e: CollectError) -> Self {
        match e {
            CollectError::Config(_) | CollectError::Expr(_) => CliError::Config(e.to_string()),
            CollectError::Data(d) => d.into(),
            CollectError::History(h) => h.into(),
            CollectError::Search(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Dims { .. } => CliError::Config(e.to_string()),
            ModelError::Io(_) | ModelError::Checkpoint(_) | ModelError::CheckpointMismatch { .. } => {
                CliError::Io(e.to_string())
            }
            ModelError::Corpus(_) => CliError::Io(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
