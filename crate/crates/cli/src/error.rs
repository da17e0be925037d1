use std::fmt;

/// Failure of a command, carrying its exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Unreadable, malformed or unsuitable input or output files (exit 2).
    Data(String),
    /// Non-finite values or a failed fit (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<waydcm_core::Error> for CliError {
    fn from(e: waydcm_core::Error) -> Self {
        use waydcm_core::Error as E;
        match e {
            E::Config(_) => CliError::Usage(e.to_string()),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
            E::Io { .. } | E::Record { .. } | E::InvalidScene { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<waydcm_nn::Error> for CliError {
    fn from(e: waydcm_nn::Error) -> Self {
        match e {
            waydcm_nn::Error::Core(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<waydcm_train::Error> for CliError {
    fn from(e: waydcm_train::Error) -> Self {
        use waydcm_train::Error as E;
        match e {
            E::Config(_) => CliError::Usage(e.to_string()),
            E::Diverged { .. } => CliError::Numerical(e.to_string()),
            E::Io { .. } => CliError::Data(e.to_string()),
            E::Core(c) => c.into(),
            E::Nn(n) => n.into(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
