use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Engine(#[from] spsconv::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for input and I/O problems.
    pub fn exit_code(&self) -> i32 {
        use spsconv::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) | CliError::Io { .. } => 3,
            CliError::Engine(e) => match e {
                E::Io(_) | E::Input(_) | E::Consistency(_) => 3,
                E::Config(_)
                | E::Shape(_)
                | E::Domain(_)
                | E::UnsupportedKernel(_)
                | E::Mode(_) => 2,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
