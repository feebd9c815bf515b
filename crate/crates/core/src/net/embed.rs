use serde::{Deserialize, Serialize};

/// Fixed sinusoidal embedding with a geometric frequency ladder from 1 to
/// `max_freq` rad per unit. The lowest frequency keeps the map injective on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub max_freq: f64,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            max_freq: 64.0,
        }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let half = self.dim / 2;
        if half == 1 {
            return vec![1.0];
        }
        (0..half)
            .map(|i| self.max_freq.powf(i as f64 / (half - 1) as f64))
            .collect()
    }

    /// Writes `[sin(w_i u)..., cos(w_i u)...]` into `out`.
    pub fn embed_into(&self, u: f64, out: &mut [f64]) {
        let half = self.dim / 2;
        for (i, w) in self.frequencies().into_iter().enumerate() {
            out[i] = (w * u).sin();
            out[half + i] = (w * u).cos();
        }
    }

    pub fn embed(&self, u: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.embed_into(u, &mut v);
        v
    }
}

/// Step sizes enter the ladder through `-log2(dt) / 8`, which spaces the
/// dyadic training grid uniformly: dt = 1 maps to 0, dt = 1/128 to 0.875.
pub fn step_coordinate(dt: f64) -> f64 {
    -dt.log2() / 8.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_known_vector() {
        let e = TimeEmbedding::new(8).embed(0.0);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    fn assert_distinct(points: &[Vec<f64>]) {
        for i in 0..points.len() {
            for j in 0..i {
                let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-3, "{i} vs {j}");
            }
        }
    }

    #[test]
    fn injective_on_training_grid() {
        let emb = TimeEmbedding::new(16);
        let times: Vec<Vec<f64>> = (0..=128).map(|k| emb.embed(k as f64 / 128.0)).collect();
        assert_distinct(&times);
        let steps: Vec<Vec<f64>> = (0..=7)
            .map(|k| emb.embed(step_coordinate(0.5f64.powi(k))))
            .collect();
        assert_distinct(&steps);
    }

    #[test]
    fn step_coordinates_are_evenly_spaced() {
        let c: Vec<f64> = (0..=7).map(|k| step_coordinate(0.5f64.powi(k))).collect();
        for w in c.windows(2) {
            assert!((w[1] - w[0] - 0.125).abs() < 1e-15);
        }
    }
}
