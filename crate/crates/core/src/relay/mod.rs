//! Inline mediation proxy: frames client streams into Modbus messages,
//! scores each one and forwards only benign traffic upstream.

mod engine;
mod framing;
mod server;

pub use engine::{DecisionRecord, DropLabel, MediationDecision, MediationEngine, RelayMode, Verdict};
pub use framing::{function_code, FrameError, MbapFramer, MBAP_PREFIX_LEN, SYNTHETIC_HEADER_BYTES};
pub use server::{run_relay, start_relay, RelayConfig, RelayHandle};

use thiserror::Error;

use crate::respond::RespondError;
use crate::workflow::WorkflowError;

#[derive(Debug, Error)]
pub enum RelayError {
    #[error("invalid relay configuration: {0}")]
    Config(String),
    #[error("cannot load models: {0}")]
    Models(#[from] WorkflowError),
    #[error(transparent)]
    Policy(#[from] RespondError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
