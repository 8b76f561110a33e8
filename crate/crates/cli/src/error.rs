use std::path::{Path, PathBuf};

/// Errors that end a command with a nonzero exit status. Divergence is not
/// one of them: it is recorded in the output files.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error{}: {message}", if path.is_empty() { String::new() } else { format!(" at `{path}`") })]
    Config { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] gitd_core::Error),
}

impl CliError {
    pub fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn data(path: &Path, message: impl Into<String>) -> Self {
        CliError::Data {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// Prefixes a core validation error with its config section.
    pub(crate) fn from_core(section: &str, e: gitd_core::Error) -> Self {
        match e {
            gitd_core::Error::Config { field, reason } => CliError::config(&format!("{section}.{field}"), reason),
            other => CliError::config(section, other.to_string()),
        }
    }

    /// Exit status: 2 for config errors, 3 for file errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } | CliError::Data { .. } => 3,
            CliError::Core(_) => 1,
        }
    }
}
