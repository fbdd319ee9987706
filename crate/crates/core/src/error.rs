use thiserror::Error;

/// Errors produced by the detection engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QcdError {
    /// A mathematical precondition failed (divergent series, non-finite
    /// quantity, observation outside the common support, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller violated an API contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// The instance is valid but outside what the requested routine handles.
    #[error("unsupported instance: {0}")]
    Unsupported(String),

    /// The bound optimizer failed to settle; carries the best iterate seen.
    #[error("optimizer did not converge (best theta {best_theta}, value {best_value})")]
    NonConvergence { best_theta: f64, best_value: f64 },
}

impl QcdError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Self::Unsupported(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, QcdError>;

/// Checks `0 < p < 1`.
pub(crate) fn check_open_probability(name: &str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(QcdError::usage(format!("{name} must lie in (0, 1); got {p}")))
    }
}
