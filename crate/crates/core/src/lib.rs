//! Shortcut-conditioned flow matching for spectrogram denoising.
//!
//! One step-conditioned velocity network, trained once with a flow-matching
//! loss plus a self-consistency loss across dyadic step sizes, serves 1-step,
//! few-step and many-step Euler inference.

pub mod checkpoint;
pub mod enhance;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod priors;
pub mod sampler;
pub mod spectro;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
