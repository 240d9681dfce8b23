use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("bag {0:?} has no regions")]
    EmptyBag(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("class {class:?} has {positives} positive and {negatives} negative bags; both are required")]
    SingleSign {
        class: String,
        positives: usize,
        negatives: usize,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
