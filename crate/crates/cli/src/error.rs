use std::fmt;

/// A failed command. The variant fixes the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Reading or writing files failed.
    Io(String),
    /// An input frame is malformed; the message names it.
    Data(String),
    /// The config file or a command-line value is invalid.
    Config(String),
    /// A prerequisite artifact from an earlier stage is missing.
    Order(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Data(_) => 3,
            CliError::Config(_) => 4,
            CliError::Order(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Io(m) => ("i/o error", m),
            CliError::Data(m) => ("data error", m),
            CliError::Config(m) => ("config error", m),
            CliError::Order(m) => ("ordering error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn io(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
