use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("no scorer configured: quality scores need a regression model file")]
    NoScorer,

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] vimagine::Error),
}

pub type Result<T, E = QualityError> = std::result::Result<T, E>;

impl QualityError {
    pub fn config(msg: impl fmt::Display) -> Self {
        QualityError::Config(msg.to_string())
    }

    pub(crate) fn parse(line: usize, msg: impl fmt::Display) -> Self {
        QualityError::Parse {
            line,
            msg: msg.to_string(),
        }
    }
}
