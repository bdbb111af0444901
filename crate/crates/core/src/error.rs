use thiserror::Error;

/// Every failure the library can report. Variants map one-to-one onto the
/// error classes named by each operation's contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("serving error: {0}")]
    Serving(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("retrieval error: {0}")]
    Retrieval(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("degenerate prompt: {0}")]
    DegeneratePrompt(String),
    #[error("alignment aborted: {0}")]
    Aborted(String),
    #[error("format mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
