use std::path::PathBuf;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("`{path}` is missing; run `xferdiv {stage}` first")]
    Missing { path: String, stage: String },

    #[error("`{path}` no longer matches the hash recorded by stage `{stage}`; rerun `xferdiv {stage}`")]
    Tampered { path: String, stage: String },

    #[error("stage `{stage}` is stale ({reason}); rerun `xferdiv {stage}`")]
    Stale { stage: String, reason: String },

    #[error("{0}")]
    Input(String),

    #[error("path `{0}` escapes the workspace")]
    OutsideWorkspace(PathBuf),

    #[error(transparent)]
    Core(#[from] xferdiv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 for anything the user can fix by correcting configuration, input
    /// data or stage order; 1 for I/O and internal failures.
    pub fn exit_code(&self) -> i32 {
        use xferdiv::Error as E;
        match self {
            CliError::Io(_) | CliError::Json(_) => 1,
            CliError::Core(e) => match e {
                E::Io(_) | E::NonFinite(_) | E::UndefinedCorrelation(_) | E::HashMismatch { .. } => 1,
                E::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}
