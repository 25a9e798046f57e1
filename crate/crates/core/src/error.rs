use thiserror::Error;

/// Errors produced by the modelling pipeline.
#[derive(Debug, Error)]
pub enum UdeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("node index {node} out of range for {n_nodes} nodes")]
    NodeIndex { node: usize, n_nodes: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    /// The integrator produced a non-finite state.
    #[error("integration diverged at step {step} (t = {time} h)")]
    Divergence { step: usize, time: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, UdeError>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(UdeError::Domain(format!("{name} must be finite, got {value}")))
    }
}
