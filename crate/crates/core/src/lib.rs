//! Mobile multi-band OFDM channel toolkit.
//!
//! Simulates time-varying multipath CSI, estimates per-path gain, delay,
//! angle and Doppler (weighted MUSIC followed by SAGE, with PSO and CMA-ES
//! baselines), strips mobility, maps static paths to a second band with small
//! neural networks and scores the spliced data in fingerprint localization.

pub mod baselines;
pub mod chanmodel;
pub mod cli;
pub mod error;
pub mod localization;
pub mod metrics;
pub mod music;
pub mod neural;
pub mod pipeline;
pub mod sage;
pub mod search;

pub use error::{Error, Result};
