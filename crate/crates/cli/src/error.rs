use std::fmt;

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or data (exit 2).
    Usage(String),
    /// Numerical backend failure (exit 3).
    Numerical(String),
    /// Filesystem failure (exit 1).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<lowrank::Error> for CliError {
    fn from(e: lowrank::Error) -> Self {
        match e {
            lowrank::Error::Input(m) => CliError::Usage(m),
            lowrank::Error::Numerical(m) => CliError::Numerical(m),
        }
    }
}
