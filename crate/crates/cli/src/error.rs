use std::fmt;
use std::io;
use std::path::Path;

use scan_core::ScanError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Failed,
    Usage,
    MissingFile,
    InvalidConfig,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Failed => 1,
            Kind::Usage => 2,
            Kind::MissingFile => 3,
            Kind::InvalidConfig => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Failed => "failed",
            Kind::Usage => "usage",
            Kind::MissingFile => "missing_file",
            Kind::InvalidConfig => "invalid_config",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::InvalidConfig, message)
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        let kind = if e.kind() == io::ErrorKind::NotFound { Kind::MissingFile } else { Kind::Failed };
        Self::new(kind, format!("{}: {e}", path.display()))
    }

    /// One JSON object on one line, for scripts reading stderr.
    pub fn line(&self) -> String {
        serde_json::json!({ "error": self.kind.name(), "message": self.message }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

impl From<ScanError> for Failure {
    fn from(e: ScanError) -> Self {
        let kind = match &e {
            ScanError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => Kind::MissingFile,
            ScanError::InvalidConfig(_) | ScanError::InvalidSpec(_) | ScanError::RatioOutOfRange(_) => Kind::InvalidConfig,
            _ => Kind::Failed,
        };
        Self::new(kind, e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Fails with `MissingFile` unless `path` exists.
pub fn require_file(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::new(Kind::MissingFile, format!("{}: no such file", path.display())))
    }
}
