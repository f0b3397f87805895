//! Process exit-code contract: 0 success, 1 usage or configuration error,
//! 2 data error, 3 numeric failure.

use phinet_core::CoreError;
use std::fmt;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// An error that knows which exit code it deserves.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Failure { code: EXIT_USAGE, message: message.into() }.into()
}

pub fn data(message: impl Into<String>) -> anyhow::Error {
    Failure { code: EXIT_DATA, message: message.into() }.into()
}

/// Core errors keep their own classification.
pub fn from_core(err: CoreError) -> anyhow::Error {
    let code = match err {
        CoreError::InvalidConfig(_) => EXIT_USAGE,
        CoreError::ShapeMismatch(_) | CoreError::InvalidData(_) => EXIT_DATA,
        CoreError::Numeric(_) => EXIT_NUMERIC,
    };
    Failure { code, message: err.to_string() }.into()
}

/// Exit code for an arbitrary error chain: the innermost Failure wins,
/// anything untyped counts as a data error.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
    }
    EXIT_DATA
}
