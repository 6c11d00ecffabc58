use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tape contract: {0}")]
    Tape(String),

    #[error("vocab: {0}")]
    Vocab(String),

    #[error("scene: {0}")]
    Scene(String),

    #[error("template: {0}")]
    Template(String),

    #[error("context length {len} exceeds limit {limit}")]
    ContextOverflow { len: usize, limit: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("training: {0}")]
    Train(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("eval: {0}")]
    Eval(String),

    #[error("persist: {0}")]
    Persist(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
