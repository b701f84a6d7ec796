use std::fmt;

use beliefmix::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config { path: String, msg: String },
    Core(Error),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config { .. } => 1,
            Self::Core(e) => match e {
                Error::InvalidArgument(_)
                | Error::UnknownCriterion(_)
                | Error::Csv(_)
                | Error::Io(_)
                | Error::TomlDe(_)
                | Error::TomlSer(_) => 1,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Config { path, msg } if path.is_empty() => write!(f, "config error: {msg}"),
            Self::Config { path, msg } => write!(f, "config error at `{path}`: {msg}"),
            Self::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Core(Error::Csv(e))
    }
}
