//! Error type shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;

/// Anything that can go wrong while building graphs, training, or preparing
/// data.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two tensors met an operation that their shapes do not support.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An input left the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A caller broke an API contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),
    /// A corpus or record failed validation.
    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = core::result::Result<T, Error>;
