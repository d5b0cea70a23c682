use std::path::PathBuf;

use crate::eval::MetricError;
use crate::gateway::{ChatMessage, GatewayError};
use crate::sections::SectionParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("template `{template}`: {reason}")]
    Template { template: String, reason: String },

    #[error(transparent)]
    Parse(#[from] SectionParseError),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("{}:{line}: {message}", path.display())]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("extraction failed for solution `{solution_id}`: {reason}")]
    Extraction {
        solution_id: String,
        reason: String,
        raw: String,
    },

    #[error("inference failed for rank {rank}: {reason}")]
    Inference { rank: u32, reason: String },

    #[error("refinement failed: {reason}")]
    Refinement {
        reason: String,
        transcript: Vec<ChatMessage>,
    },

    #[error("selection aborted after {attempts} invalid answers")]
    SelectionAborted { attempts: usize },

    #[error("stage `{stage}` produced no code")]
    EmptyStage { stage: String },

    #[error("integration produced no code")]
    EmptyIntegration,

    #[error("repair attempt {attempt} produced no code")]
    EmptyRepair { attempt: u32 },

    #[error("missing data files: {}", display_paths(.missing))]
    MissingDataFiles { missing: Vec<PathBuf> },

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
