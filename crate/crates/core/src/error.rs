use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure of the external codec bridge.
#[derive(Debug, Error)]
#[error("{reason} (exit code {exit_code:?}){}", fmt_stderr(.stderr))]
pub struct BridgeError {
    pub reason: String,
    pub exit_code: Option<i32>,
    pub stderr: String,
}

fn fmt_stderr(stderr: &str) -> String {
    if stderr.trim().is_empty() {
        String::new()
    } else {
        format!("; stderr: {}", stderr.trim())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate affinities: all input points are identical")]
    DegenerateAffinity,
    #[error("node {dst} is unreachable from node {src}")]
    Unreachable { src: usize, dst: usize },
    #[error("no candidate node: {0}")]
    NoCandidate(String),
    #[error("image is not in the synthetic registry")]
    NotInRegistry,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("codec bridge: {0}")]
    Bridge(#[from] BridgeError),
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            column,
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end:
    /// 2 input/IO, 3 contract violation, 4 planning failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse { .. } | Error::Config(_) | Error::Bridge(_) => 2,
            Error::Unreachable { .. } | Error::NoCandidate(_) => 4,
            Error::Contract(_)
            | Error::EmptyInput(_)
            | Error::TooFewPoints { .. }
            | Error::DegenerateAffinity
            | Error::NotInRegistry
            | Error::InvalidDataset(_) => 3,
        }
    }
}
