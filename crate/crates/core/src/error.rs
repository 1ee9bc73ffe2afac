use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown user id `{0}`")]
    UnknownUser(String),

    #[error("self-referencing relationship action for `{0}`")]
    SelfRelation(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("graph is not connected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty memory pool")]
    EmptyPool,

    #[error("template `{0}` not found")]
    UnknownTemplate(String),

    #[error("template `{template}` is missing field `{placeholder}`")]
    MissingPlaceholder { template: String, placeholder: String },

    #[error("could not parse actions: {0}")]
    Parse(String),

    #[error("backend unavailable: {0}")]
    Backend(String),

    #[error("corrupt event log: {0}")]
    CorruptLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
