use std::fmt;

use serde_json::json;
use tsnn::{ErrorKind, TsnnError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(TsnnError),
}

impl From<TsnnError> for CliError {
    fn from(e: TsnnError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Core(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(self.kind())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self.kind() {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Computation => "computation",
        };
        json!({ "error": { "kind": kind, "code": self.exit_code(), "message": self.to_string() } })
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Computation => 3,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}
