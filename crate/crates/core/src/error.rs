use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(line: usize, key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
