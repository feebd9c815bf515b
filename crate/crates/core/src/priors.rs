//! Endpoint priors `p1(x | y)` that start every inference trajectory.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectro::Bins;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorKind {
    /// Standard complex Gaussian, independent of the observation.
    G,
    /// Observation-centred Gaussian with fixed standard deviation.
    S,
    /// Observation-centred Gaussian with variance scaled to the observation.
    D,
    /// Point mass at the observation.
    F,
}

impl PriorKind {
    pub const ALL: [PriorKind; 4] = [PriorKind::G, PriorKind::S, PriorKind::D, PriorKind::F];

    pub fn code(self) -> u8 {
        match self {
            PriorKind::G => 0,
            PriorKind::S => 1,
            PriorKind::D => 2,
            PriorKind::F => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::G => "G",
            PriorKind::S => "S",
            PriorKind::D => "D",
            PriorKind::F => "F",
        })
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "G" => Ok(PriorKind::G),
            "S" => Ok(PriorKind::S),
            "D" => Ok(PriorKind::D),
            "F" => Ok(PriorKind::F),
            other => Err(Error::Config(format!("unknown prior `{other}` (expected G, S, D or F)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Standard deviation of the S prior, in STFT-coefficient units.
    pub sigma_end: f64,
    /// Variance multiplier of the D prior.
    pub alpha: f64,
}

impl PriorSpec {
    pub fn new(kind: PriorKind) -> Self {
        Self {
            kind,
            sigma_end: 0.389,
            alpha: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PriorKind::S if !(self.sigma_end > 0.0 && self.sigma_end.is_finite()) => Err(
                Error::Config(format!("sigma_end must be positive, got {}", self.sigma_end)),
            ),
            PriorKind::D if !(self.alpha > 0.0 && self.alpha.is_finite()) => {
                Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)))
            }
            _ => Ok(()),
        }
    }

    /// Standard deviation of the complex perturbation around the centre,
    /// or `None` for the point-mass prior.
    pub fn noise_scale(&self, y: &Bins) -> Option<f64> {
        match self.kind {
            PriorKind::G => Some(1.0),
            PriorKind::S => Some(self.sigma_end),
            PriorKind::D => Some((self.alpha * coefficient_variance(y)).sqrt()),
            PriorKind::F => None,
        }
    }

    pub fn is_centred(&self) -> bool {
        self.kind != PriorKind::G
    }
}

/// Unbiased variance of all real and imaginary parts of `y`, pooled.
pub fn pooled_variance(y: &Bins) -> f64 {
    let n = 2 * y.len();
    if n < 2 {
        return 0.0;
    }
    let mean = y.iter().map(|v| v.re + v.im).sum::<f64>() / n as f64;
    let ss: f64 = y
        .iter()
        .map(|v| (v.re - mean).powi(2) + (v.im - mean).powi(2))
        .sum();
    ss / (n - 1) as f64
}

/// Variance of the complex coefficients, `E|y - mean|^2`: twice the pooled
/// per-component variance, matching the unit-complex-variance convention of
/// the Gaussian draws.
pub fn coefficient_variance(y: &Bins) -> f64 {
    2.0 * pooled_variance(y)
}

/// Circularly-symmetric complex normal with `E|z|^2 = 1`.
pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws `x1 ~ p1(. | y)` with an explicit perturbation scale. `None`
/// returns `y` unchanged without touching the RNG.
pub fn draw_with_scale(centred: bool, y: &Bins, scale: Option<f64>, rng: &mut impl Rng) -> Bins {
    match scale {
        None => y.clone(),
        Some(s) if centred => y.mapv(|v| v + complex_normal(rng) * s),
        Some(s) => y.mapv(|_| complex_normal(rng) * s),
    }
}

pub fn sample_prior(spec: &PriorSpec, y: &Bins, rng: &mut impl Rng) -> Result<Bins> {
    spec.validate()?;
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Domain("observation contains non-finite coefficients".into()));
    }
    Ok(draw_with_scale(spec.is_centred(), y, spec.noise_scale(y), rng))
}
