//! Errors shared across modules.

/// A closed-form or measurement was requested outside its valid domain.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

impl DomainError {
    pub(crate) fn new(msg: impl Into<String>) -> DomainError {
        DomainError(msg.into())
    }
}
