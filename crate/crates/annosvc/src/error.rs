use thiserror::Error;

/// Why a judgment was not recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("already judged")]
    AlreadyJudged,
    #[error("unknown task")]
    UnknownTask,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Input(String),
    #[error("{path}:{line}: {message}")]
    Log {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown campaign {0:?}")]
    UnknownCampaign(String),
    #[error("no judgments recorded")]
    NoJudgments,
    #[error(transparent)]
    Rejected(#[from] Rejection),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
