use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its documented range.
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// The backend does not provide the requested capability.
    #[error("capability not supported by backend `{backend}`: {capability}")]
    Capability {
        backend: String,
        capability: &'static str,
    },
    #[error("usage error: {0}")]
    Usage(String),
    /// Frame dimensions unsuitable for the requested sampling.
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("validation error: {0}")]
    Validation(String),
}
