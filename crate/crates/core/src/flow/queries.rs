use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    FlowMatching,
    SelfConsistency,
}

/// A training pair on the dyadic grid. For self-consistency queries `dt` is
/// the size of each of the two sub-steps; the network is trained at `2 dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepQuery {
    pub t: f64,
    pub dt: f64,
    pub kind: TargetKind,
}

impl StepQuery {
    pub fn is_admissible(&self, schedule: &StepSchedule) -> bool {
        let exp = -self.dt.log2();
        if exp.fract() != 0.0 || self.dt < schedule.dt_min || self.dt > schedule.dt_max {
            return false;
        }
        let span = match self.kind {
            TargetKind::FlowMatching if self.dt != schedule.dt_min => return false,
            TargetKind::FlowMatching => self.dt,
            TargetKind::SelfConsistency => 2.0 * self.dt,
        };
        self.t >= 0.0 && (self.t / span).fract() == 0.0 && self.t + span <= 1.0
    }
}

/// Parameters of the `(t, dt)` distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub dt_min: f64,
    pub dt_max: f64,
    /// Fraction of each batch given self-consistency targets.
    pub rate_sc: f64,
    /// Probability that a self-consistency query is moved to `t = 0`.
    pub rho: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            dt_min: 1.0 / 128.0,
            dt_max: 0.5,
            rate_sc: 0.25,
            rho: 0.1,
        }
    }
}

fn dyadic_exponent(v: f64) -> Option<u32> {
    if !(v > 0.0 && v <= 1.0) {
        return None;
    }
    let e = -v.log2();
    (e.fract() == 0.0 && e <= 30.0).then_some(e as u32)
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let lo = dyadic_exponent(self.dt_min);
        let hi = dyadic_exponent(self.dt_max);
        match (lo, hi) {
            (Some(lo), Some(hi)) if hi >= 1 && hi <= lo => {}
            _ => {
                return Err(Error::Config(format!(
                    "dt bounds must be powers of two with dt_min <= dt_max <= 1/2, got [{}, {}]",
                    self.dt_min, self.dt_max
                )))
            }
        }
        if !(0.0..=1.0).contains(&self.rate_sc) {
            return Err(Error::Config(format!("rate_sc {} outside [0, 1]", self.rate_sc)));
        }
        if !(0.0..=0.2).contains(&self.rho) {
            return Err(Error::Config(format!("rho {} outside [0, 0.2]", self.rho)));
        }
        Ok(())
    }

    /// Dyadic sub-step sizes available to self-consistency targets, largest first.
    pub fn levels(&self) -> Vec<f64> {
        let lo = dyadic_exponent(self.dt_min).unwrap_or(1);
        let hi = dyadic_exponent(self.dt_max).unwrap_or(1);
        (hi..=lo).map(|k| 0.5f64.powi(k as i32)).collect()
    }

    /// Number of self-consistency queries in a batch of `batch_size`.
    pub fn sc_count(&self, batch_size: usize) -> usize {
        ((self.rate_sc * batch_size as f64).ceil() as usize).min(batch_size)
    }
}

/// Draws one batch of queries: the first `ceil(rate_sc * batch_size)` are
/// self-consistency targets, the rest flow-matching targets.
pub fn sample_step_queries(
    batch_size: usize,
    schedule: &StepSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<StepQuery>> {
    schedule.validate()?;
    Ok(draw(batch_size, schedule, rng))
}

/// Same as [`sample_step_queries`] but skips the `rho <= 0.2` range check.
#[doc(hidden)]
pub fn sample_step_queries_unchecked_rho(
    batch_size: usize,
    schedule: &StepSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<StepQuery>> {
    StepSchedule { rho: 0.0, ..*schedule }.validate()?;
    Ok(draw(batch_size, schedule, rng))
}

fn draw(batch_size: usize, schedule: &StepSchedule, rng: &mut impl Rng) -> Vec<StepQuery> {
    let levels = schedule.levels();
    let n_sc = schedule.sc_count(batch_size);
    let fm_slots = (1.0 / schedule.dt_min).round() as u64;
    (0..batch_size)
        .map(|i| {
            if i < n_sc {
                let dt = levels[rng.random_range(0..levels.len())];
                let slots = (0.5 / dt).round() as u64;
                let mut t = rng.random_range(0..slots) as f64 * 2.0 * dt;
                if schedule.rho > 0.0 && rng.random_bool(schedule.rho.min(1.0)) {
                    t = 0.0;
                }
                StepQuery {
                    t,
                    dt,
                    kind: TargetKind::SelfConsistency,
                }
            } else {
                StepQuery {
                    t: rng.random_range(0..fm_slots) as f64 * schedule.dt_min,
                    dt: schedule.dt_min,
                    kind: TargetKind::FlowMatching,
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn batch_split_follows_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = StepSchedule {
            rate_sc: 0.25,
            ..Default::default()
        };
        let q = sample_step_queries(8, &s, &mut rng).unwrap();
        let sc = q.iter().filter(|q| q.kind == TargetKind::SelfConsistency).count();
        assert_eq!(sc, 2);
        assert_eq!(s.sc_count(10), 3);
    }

    #[test]
    fn rho_one_maps_every_sc_query_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = StepSchedule {
            rate_sc: 0.5,
            rho: 1.0,
            ..Default::default()
        };
        assert!(sample_step_queries(64, &s, &mut rng).is_err());
        let q = sample_step_queries_unchecked_rho(64, &s, &mut rng).unwrap();
        for q in q.iter().filter(|q| q.kind == TargetKind::SelfConsistency) {
            assert_eq!(q.t, 0.0);
        }
    }

    #[test]
    fn draws_are_admissible_and_cover_every_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = StepSchedule::default();
        let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
        let mut total = 0;
        while total < 100_000 {
            for q in sample_step_queries(16, &s, &mut rng).unwrap() {
                assert!(q.is_admissible(&s), "{q:?}");
                *counts.entry(-q.dt.log2() as i32).or_default() += 1;
                total += 1;
            }
        }
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), (1..=7).collect::<Vec<_>>());
        assert!(counts.values().all(|&c| c > 0));
    }

    #[test]
    fn composite_span_reaches_one() {
        let s = StepSchedule::default();
        assert_eq!(2.0 * s.levels()[0], 1.0);
        assert_eq!(*s.levels().last().unwrap(), s.dt_min);
    }

    #[test]
    fn invalid_bounds_are_config_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (lo, hi) in [(0.01, 0.5), (1.0 / 128.0, 1.0), (0.25, 0.125), (0.0, 0.5)] {
            let s = StepSchedule {
                dt_min: lo,
                dt_max: hi,
                ..Default::default()
            };
            assert!(matches!(sample_step_queries(4, &s, &mut rng), Err(Error::Config(_))));
        }
    }
}
