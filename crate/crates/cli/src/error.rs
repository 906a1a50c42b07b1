use std::fmt;

/// Command failure with a stable exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    MissingFile(String),
    Invariant(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingFile(_) => "missing_file",
            CliError::Invariant(_) => "invariant",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::MissingFile(m) | CliError::Invariant(m) | CliError::Io(m) => m,
        }
    }

    /// `error kind=<kind> code=<code>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self.message().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error kind={} code={}: {}", self.kind(), self.code(), msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<utsplab::Error> for CliError {
    fn from(e: utsplab::Error) -> Self {
        match &e {
            utsplab::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingFile(e.to_string())
            }
            utsplab::Error::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
