//! Incident response: maps classified attacks to containment actions and
//! installs source blocks through a pluggable firewall backend.

mod backend;
mod incident;
mod policy;

pub use backend::{
    block_source, unix_time_us, CommandBackend, FirewallBackend, MemoryBlocklist,
    DEFAULT_BLOCK_TEMPLATE,
};
pub use incident::{IncidentRecord, IncidentResponder};
pub use policy::{Action, ResponsePolicy};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RespondError {
    #[error("block command failed: {0}")]
    Command(String),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
