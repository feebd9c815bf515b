//! Rectified-flow path, flow-matching and shortcut self-consistency losses,
//! and the `(t, dt)` training-pair sampler.
//!
//! Time convention: the internal clock `s` runs from 0 at the prior endpoint
//! `x1` to 1 at the clean endpoint `x0`, so inference integrates forward from
//! `s = 0`. In the usual backward-time notation `t = 1 - s`.

mod loss;
mod queries;

pub use loss::{
    fm_loss, sc_loss, sc_residuals, sc_targets, shortcut_step, LossBreakdown, LossWeights,
    TrainItem,
};
#[doc(hidden)]
pub use loss::sc_residuals_sign_flipped;
pub use queries::{sample_step_queries, StepQuery, StepSchedule, TargetKind};
#[doc(hidden)]
pub use queries::sample_step_queries_unchecked_rho;

use crate::error::{Error, Result};
use crate::spectro::Bins;

/// A point on the straight path between a clean and a prior endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub x0: Bins,
    pub x1: Bins,
    pub xt: Bins,
    pub v_target: Bins,
}

/// `xt = (1 - s) x1 + s x0`, `v_target = x0 - x1`.
pub fn interpolate(x0: &Bins, x1: &Bins, s: f64) -> Result<PathSample> {
    if x0.dim() != x1.dim() {
        return Err(Error::Contract(format!(
            "endpoint shapes differ: {:?} vs {:?}",
            x0.dim(),
            x1.dim()
        )));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Contract(format!("path time {s} outside [0, 1]")));
    }
    let xt = if s == 0.0 {
        x1.clone()
    } else if s == 1.0 {
        x0.clone()
    } else {
        x1 * (1.0 - s) + x0 * s
    };
    Ok(PathSample {
        x0: x0.clone(),
        x1: x1.clone(),
        xt,
        v_target: x0 - x1,
    })
}
