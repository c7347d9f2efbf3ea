use std::fmt;
use std::path::Path;

pub const USAGE: u8 = 2;
pub const CONFIG: u8 = 3;
pub const DATA: u8 = 4;
pub const RUNTIME: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(RUNTIME, format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<shedd::Error> for CliError {
    fn from(e: shedd::Error) -> Self {
        use shedd::Error::*;
        let code = match &e {
            Config(_) | Geometry(_) => CONFIG,
            CorruptDataset(_) | Manifest(_) | InsufficientData(_) | Json { .. } => DATA,
            Shape(_) | Contract(_) | Io { .. } => RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

/// Attaches context to a failure while keeping its exit code.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
    /// Reclassifies the failure as a data error.
    fn data_context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| {
            let e = e.into();
            CliError::new(e.code, format!("{}: {}", what(), e.message))
        })
    }

    fn data_context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| {
            let e = e.into();
            let code = if e.code == CONFIG { CONFIG } else { DATA };
            CliError::new(code, format!("{}: {}", what(), e.message))
        })
    }
}
