use synthaug::backend::BackendError;
use synthaug::corpus::CorpusError;
use synthaug::datasets::DatasetError;
use synthaug::imagegen::ImageGenError;
use synthaug::metrics::MetricsError;
use synthaug::textgen::TextGenError;
use synthaug::trainer::TrainError;
use thiserror::Error;

/// Command failure, classified by exit code: 2 for configuration or input
/// problems, 3 for backend or transport failures, 4 for partial results.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("partial failure: {0}")]
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Partial(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TextGenError> for CliError {
    fn from(e: TextGenError) -> Self {
        let transport = match &e {
            TextGenError::Backend(_) => true,
            TextGenError::ForLabel { source, .. } => matches!(**source, TextGenError::Backend(_)),
            _ => false,
        };
        if transport {
            CliError::Backend(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<ImageGenError> for CliError {
    fn from(e: ImageGenError) -> Self {
        match e {
            ImageGenError::Backend(_) | ImageGenError::StageSize { .. } => CliError::Backend(e.to_string()),
            ImageGenError::Partial { .. } => CliError::Partial(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Input(e.to_string())
    }
}
