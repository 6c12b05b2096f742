use caamargin::Error;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(e) => e.exit_code(),
            Self::Config(_) => EXIT_CONFIG,
            Self::Data(_) => EXIT_DATA,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::Data(format!("{}: {e}", path.display()))
    }

    /// Same error with the file it came from.
    pub fn in_file(self, path: &std::path::Path) -> Self {
        let p = path.display();
        match self {
            Self::Config(m) => Self::Config(format!("{p}: {m}")),
            Self::Data(m) => Self::Data(format!("{p}: {m}")),
            Self::Numerical(m) => Self::Numerical(format!("{p}: {m}")),
            other => other,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Parse { line: 0, message } => Self::Config(format!("command line: {message}")),
            Error::Parse { line, message } => Self::Config(format!("line {line}: {message}")),
            Error::InvalidConfig(_) => Self::Config(e.to_string()),
            Error::NonFinite { .. }
            | Error::VanishedGradients
            | Error::ZeroNorm { .. }
            | Error::NotUnitNorm { .. } => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}
