use std::fmt;

/// Failures that end a run with exit code 2.
#[derive(Debug)]
pub enum CliError {
    /// Invalid or unreadable configuration; the message starts with the key path.
    Config(String),
    /// A library call failed inside the named module.
    Runtime { module: &'static str, source: lmf_core::Error },
    Io(std::io::Error),
}

impl CliError {
    pub fn runtime(module: &'static str) -> impl Fn(lmf_core::Error) -> CliError {
        move |source| CliError::Runtime { module, source }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime { module, source } => write!(f, "{module}: {source}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<lmf_core::Error> for CliError {
    fn from(source: lmf_core::Error) -> Self {
        CliError::Runtime { module: "io", source }
    }
}
