//! Two-dimensional Gaussian transport task: the real and imaginary parts of
//! a single coefficient form the plane, the observation is zero, and the
//! prior is the standard complex Gaussian.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{NetConfig, VelocityField};
use crate::oracle::{cholesky, sample_gaussian};
use crate::priors::complex_normal;
use crate::sampler::OdeSampler;
use crate::spectro::Bins;
use crate::train::SpecPair;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianToy {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Default for GaussianToy {
    fn default() -> Self {
        Self {
            mean: [4.0, -3.0],
            cov: [[1.0, 0.6], [0.6, 0.8]],
        }
    }
}

impl GaussianToy {
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
        let cov: Vec<Vec<f64>> = self.cov.iter().map(|r| r.to_vec()).collect();
        let l = cholesky(&cov)?;
        Ok((0..n)
            .map(|_| {
                let v = sample_gaussian(&self.mean, &l, rng);
                [v[0], v[1]]
            })
            .collect())
    }

    /// Relative Frobenius errors of the mean and covariance of `samples`.
    pub fn relative_errors(&self, samples: &[[f64; 2]]) -> Result<(f64, f64)> {
        let (m, c) = moments(samples)?;
        let dm = ((m[0] - self.mean[0]).powi(2) + (m[1] - self.mean[1]).powi(2)).sqrt();
        let nm = (self.mean[0].powi(2) + self.mean[1].powi(2)).sqrt();
        let mut dc = 0.0;
        let mut nc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                dc += (c[i][j] - self.cov[i][j]).powi(2);
                nc += self.cov[i][j].powi(2);
            }
        }
        Ok((dm / nm, (dc / nc).sqrt()))
    }
}

pub fn toy_net_config() -> NetConfig {
    NetConfig {
        bins: 1,
        context: 0,
        hidden: 64,
        blocks: 3,
        embed_dim: 16,
    }
}

/// Wraps each point as a one-coefficient clean spectrogram with a zero observation.
pub fn toy_pairs(points: &[[f64; 2]]) -> Vec<SpecPair> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| SpecPair {
            id: format!("toy{i}"),
            clean: Bins::from_elem((1, 1), Complex64::new(p[0], p[1])),
            noisy: Bins::zeros((1, 1)),
        })
        .collect()
}

/// Integrates `n` prior draws in `steps` Euler steps. All draws travel as
/// frames of one spectrogram, which a context-free network treats independently.
pub fn generate(field: &impl VelocityField, n: usize, steps: usize, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
    let x1 = Bins::from_shape_fn((1, n), |_| complex_normal(rng));
    let y = Bins::zeros((1, n));
    let x0 = OdeSampler::new().integrate(field, x1, &y, steps)?;
    Ok(x0.iter().map(|c| [c.re, c.im]).collect())
}

pub fn moments(samples: &[[f64; 2]]) -> Result<([f64; 2], [[f64; 2]; 2])> {
    if samples.len() < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let mut m = [0.0; 2];
    for s in samples {
        m[0] += s[0] / n;
        m[1] += s[1] / n;
    }
    let mut c = [[0.0; 2]; 2];
    for s in samples {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += (s[i] - m[i]) * (s[j] - m[j]) / (n - 1.0);
            }
        }
    }
    Ok((m, c))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sample_moments_match_target() {
        let toy = GaussianToy::default();
        let s = toy.sample(200_000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (dm, dc) = toy.relative_errors(&s).unwrap();
        assert!(dm < 0.01 && dc < 0.02, "{dm} {dc}");
    }

    #[test]
    fn moments_by_hand() {
        let (m, c) = moments(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        assert_eq!(m, [1.0, 2.0]);
        assert_eq!(c, [[2.0, 4.0], [4.0, 8.0]]);
        assert!(moments(&[[1.0, 1.0]]).is_err());
    }
}
