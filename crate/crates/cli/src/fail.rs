//! One-line, machine-parsable failures with a distinct exit code per kind.

use std::io;
use std::path::Path;

use sgvf::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    MissingFile,
    Io,
    Dimension,
    Format,
    Training,
    Input,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Self::Config => 3,
            Self::MissingFile => 4,
            Self::Io => 5,
            Self::Dimension => 6,
            Self::Format => 7,
            Self::Training => 8,
            Self::Input => 9,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::MissingFile => "missing_file",
            Self::Io => "io",
            Self::Dimension => "dimension",
            Self::Format => "format",
            Self::Training => "training",
            Self::Input => "input",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: message.into() }
    }

    pub fn dimension(message: impl Into<String>) -> Self {
        Self { kind: Kind::Dimension, message: message.into() }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        let kind = if err.kind() == io::ErrorKind::NotFound { Kind::MissingFile } else { Kind::Io };
        Self { kind, message: format!("{}: {err}", path.display()) }
    }

    /// `error kind=<label> code=<n> message="<text>"`
    pub fn line(&self) -> String {
        let text = self.message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
        format!("error kind={} code={} message=\"{text}\"", self.kind.label(), self.kind.code())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Config(_) => Kind::Config,
            Error::Shape(_) => Kind::Dimension,
            Error::Format { .. } | Error::Csv { .. } => Kind::Format,
            Error::Training { .. } | Error::Numeric(_) => Kind::Training,
            Error::Io(io) if io.kind() == io::ErrorKind::NotFound => Kind::MissingFile,
            Error::Io(_) => Kind::Io,
            _ => Kind::Input,
        };
        Self { kind, message: e.to_string() }
    }
}

pub fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure { kind: Kind::MissingFile, message: format!("{}: no such file", path.display()) })
    }
}
