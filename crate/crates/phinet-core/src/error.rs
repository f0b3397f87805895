use alloc::string::String;
use core::fmt;

/// Errors surfaced by the core computations.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes are incompatible with the requested operation.
    ShapeMismatch(String),
    /// A configuration value is outside its valid range.
    InvalidConfig(String),
    /// Input data violates a documented precondition (empty set, NaN, ...).
    InvalidData(String),
    /// A computation produced a non-finite or otherwise unusable value.
    Numeric(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            CoreError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            CoreError::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            CoreError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}
