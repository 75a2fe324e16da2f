//! Inline intrusion-detection relay for Modbus/TCP controllers.
//!
//! Each inbound message is reduced to header-level telemetry
//! ([`telemetry`]), normalized and projected ([`preprocess`]), scored by a
//! Local Outlier Factor novelty detector and, when anomalous, categorized by
//! a random forest ([`detect`]). The [`relay`] forwards only messages that
//! score as benign and hands incidents to [`respond`]. [`simlab`] generates
//! labeled scenario traffic and runs the latency and flood experiments.

pub mod detect;
pub mod net;
pub mod par;
pub mod preprocess;
pub mod relay;
pub mod respond;
pub mod simlab;
pub mod telemetry;
pub mod workflow;
