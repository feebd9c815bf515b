//! Few-step deterministic inference with a step-conditioned field, and a
//! reference Euler–Maruyama stepper for analytic SDEs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::net::VelocityField;
use crate::priors::{sample_prior, PriorSpec};
use crate::spectro::{Bins, ComplexSpectrogram};

/// `K` uniform steps of size `1/K` on the internal clock (0 at the prior).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OdeSchedule {
    steps: usize,
}

impl OdeSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// `k / K` for `k = 0..K`, each computed from the integer ratio.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.steps).map(move |k| k as f64 / self.steps as f64)
    }
}

/// Euler integrator that remembers how many network evaluations its last
/// call performed, including calls that failed part-way.
#[derive(Debug, Default, Clone)]
pub struct OdeSampler {
    last_nfe: usize,
}

impl OdeSampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Network evaluations performed by the most recent call.
    pub fn nfe_count(&self) -> usize {
        self.last_nfe
    }

    /// `x <- x + d f(x, s_k, d, y)` for `k = 0..K`, starting from `x1`.
    pub fn integrate(
        &mut self,
        field: &impl VelocityField,
        x1: Bins,
        y: &Bins,
        steps: usize,
    ) -> Result<Bins> {
        self.last_nfe = 0;
        let schedule = OdeSchedule::new(steps)?;
        let d = schedule.step_size();
        let mut x = x1;
        for (k, s) in schedule.times().enumerate() {
            let v = field.eval(&x, s, d, y)?;
            self.last_nfe += 1;
            x.zip_mut_with(&v, |xi, vi| *xi += vi * d);
            if x.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::Inference {
                    step: k + 1,
                    msg: "state became non-finite".into(),
                });
            }
        }
        Ok(x)
    }

    /// Draws `x1` from the prior and integrates it to a clean estimate in `steps` evaluations.
    pub fn enhance(
        &mut self,
        field: &impl VelocityField,
        y: &ComplexSpectrogram,
        prior: &PriorSpec,
        steps: usize,
        rng: &mut impl Rng,
    ) -> Result<ComplexSpectrogram> {
        self.last_nfe = 0;
        let x1 = sample_prior(prior, &y.bins, rng)?;
        let x0 = self.integrate(field, x1, &y.bins, steps)?;
        y.with_bins(x0)
    }
}

/// Drift, diffusion and score of a forward SDE `dx = f(x, t) dt + g(t) dw`,
/// acting component-wise on the state.
pub trait SdeCoeffs {
    fn drift(&self, x: f64, t: f64) -> f64;
    fn diffusion(&self, t: f64) -> f64;
    fn score(&self, x: f64, t: f64) -> f64;
}

/// One reverse-time Euler–Maruyama step from `t_k` to `t_k - dt`:
/// `x - dt (f - g^2 score) + g sqrt(dt) z`.
pub fn euler_maruyama_step(
    x: &[f64],
    t_k: f64,
    dt: f64,
    coeffs: &impl SdeCoeffs,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) || t_k - dt < -1e-12 {
        return Err(Error::Contract(format!(
            "need dt > 0 and t_k - dt >= 0, got t_k={t_k} dt={dt}"
        )));
    }
    let g = coeffs.diffusion(t_k);
    let noise_scale = g * dt.sqrt();
    Ok(x.iter()
        .map(|&xi| {
            let z: f64 = StandardNormal.sample(rng);
            let drift = coeffs.drift(xi, t_k) - g * g * coeffs.score(xi, t_k);
            (xi - dt * drift) + noise_scale * z
        })
        .collect())
}

/// Deterministic reverse-time Euler step `x - dt f(x, t_k)`.
pub fn euler_step(x: &[f64], t_k: f64, dt: f64, drift: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    x.iter().map(|&xi| xi - dt * drift(xi, t_k)).collect()
}

/// Ornstein–Uhlenbeck process `dx = -theta x dt + sigma dw` started from
/// `N(mean0, var0)`, with its exact time-marginal score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrnsteinUhlenbeck {
    pub theta: f64,
    pub sigma: f64,
    pub mean0: f64,
    pub var0: f64,
}

impl OrnsteinUhlenbeck {
    pub fn mean(&self, t: f64) -> f64 {
        self.mean0 * (-self.theta * t).exp()
    }

    pub fn var(&self, t: f64) -> f64 {
        let decay = (-2.0 * self.theta * t).exp();
        self.var0 * decay + self.sigma * self.sigma / (2.0 * self.theta) * (1.0 - decay)
    }
}

impl SdeCoeffs for OrnsteinUhlenbeck {
    fn drift(&self, x: f64, _t: f64) -> f64 {
        -self.theta * x
    }

    fn diffusion(&self, _t: f64) -> f64 {
        self.sigma
    }

    fn score(&self, x: f64, t: f64) -> f64 {
        -(x - self.mean(t)) / self.var(t)
    }
}
