use serde_json::{json, Value};
use thiserror::Error;
use trace_core::attention::AttentionError;
use trace_core::dataset::DatasetError;
use trace_core::eval::EvalError;
use trace_core::scene::SceneError;
use trace_core::stats::StatsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Config { message: String, keys: Vec<String> },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Scene(_) => "scene",
            CliError::Dataset(DatasetError::Endpoint { .. }) => "endpoint",
            CliError::Dataset(_) => "dataset",
            CliError::Eval(EvalError::MissingCache { .. }) => "missing_cache",
            CliError::Eval(_) => "eval",
            CliError::Stats(_) => "stats",
            CliError::Attention(_) => "attention",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
            CliError::Image(_) => "image",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The single JSON object written to standard error on failure.
    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { keys, .. } if !keys.is_empty() => err["keys"] = json!(keys),
            CliError::Eval(EvalError::MissingCache { record_id, run_id }) => {
                err["record_id"] = json!(record_id);
                err["run_id"] = json!(run_id);
            }
            _ => {}
        }
        json!({ "error": err })
    }
}
