use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid axis set: {0}")]
    InvalidAxes(String),

    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),

    #[error("prompt rendered to an empty string")]
    EmptyRender,

    #[error("missing score for `{prompt}` (axis {axis})")]
    MissingScore { axis: String, prompt: String },

    #[error("plan precondition violated: {0}")]
    PlanPrecondition(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("annotation {ann_id} references unknown image {image_id}")]
    DanglingAnnotation { ann_id: i64, image_id: i64 },

    #[error("box with non-positive area in annotation {ann_id}: {bbox:?}")]
    ZeroAreaBox { ann_id: i64, bbox: [f64; 4] },

    #[error("score {score} out of [0, 1] at {path}:{line}")]
    ScoreOutOfRange { path: PathBuf, line: usize, score: f64 },

    #[error("detections reference unknown image {0}")]
    UnknownImage(i64),

    #[error("no detections recorded for prompt `{0}`")]
    UnknownPrompt(String),

    #[error("cached backend has no prediction for image {image_id} and prompt `{prompt}`")]
    MissingPrediction { image_id: i64, prompt: String },

    #[error("invalid detect request: {0}")]
    InvalidRequest(String),

    #[error("remote backend unavailable: {0}")]
    RemoteUnavailable(String),

    #[error("remote backend returned malformed payload: {0}")]
    RemoteSchema(String),

    #[error("backend `{0}` does not support a background class")]
    BackgroundUnsupported(String),

    #[error("LLM endpoint unavailable: {0}")]
    EndpointUnavailable(String),

    #[error("translated axes failed validation after {attempts} attempt(s): {errors:?}")]
    SchemaViolation { attempts: u32, errors: Vec<String> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("baseline trial failed: {0}")]
    BaselineFailed(String),

    #[error("ledger has no usable records: {0}")]
    EmptyLedger(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
