//! Error contract shared by every pluggable agent.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    /// The caller falls back to a neutral answer (hold, zero sentiment).
    #[error("agent degraded: {0}")]
    Degraded(String),
    /// The run cannot continue, e.g. a replay transcript diverged.
    #[error("{0}")]
    Fatal(String),
}

impl AgentError {
    pub fn is_fatal(&self) -> bool {
        matches!(self, AgentError::Fatal(_))
    }
}
