use thiserror::Error;

/// Errors raised by the model, the statistics routines and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A physical or numerical parameter is outside its valid range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A quantity was requested outside the domain where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller combined arguments in a way the model does not support.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data is too short or malformed for the requested estimate.
    #[error("data error: {0}")]
    Data(String),

    /// Configuration file could not be parsed or validated.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// The split-step integrator produced a non-finite field.
    #[error("numeric overflow in span {span}, step {step}")]
    Overflow { span: usize, step: usize },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter { name, reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
