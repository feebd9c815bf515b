//! Independent reference computations for tests and the `oracle` subcommand.
//!
//! Nothing here calls into `flow` arithmetic; agreement between the two is
//! only meaningful if the code paths are separate.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::flow::{self, StepQuery, TargetKind, TrainItem};
use crate::net::{NetConfig, Query, VelocityField, VelocityNet};
use crate::spectro::Bins;

/// Straight-line velocity of a coupled pair on the internal clock: `x0 - x1`.
pub fn exact_pair_velocity(x0: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(Error::Contract("pair dimensions differ".into()));
    }
    let mut v = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        v.push(x0[i] - x1[i]);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPair {
    pub mean0: Vec<f64>,
    pub cov0: Vec<Vec<f64>>,
    pub mean1: Vec<f64>,
    pub cov1: Vec<Vec<f64>>,
}

impl GaussianPair {
    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > 8 || self.mean1.len() != d {
            return Err(Error::Contract(format!("unsupported dimension {d}")));
        }
        cholesky(&self.cov0)?;
        cholesky(&self.cov1)?;
        Ok(())
    }
}

/// Lower-triangular factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if a[i].len() != n {
            return Err(Error::Contract("covariance must be square".into()));
        }
        for j in 0..n {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                return Err(Error::Contract("covariance must be symmetric".into()));
            }
        }
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Contract("covariance must be positive definite".into()));
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Mean and covariance of `(1 - s) x1 + s x0` for independent endpoints.
pub fn marginal_flow_moments(pair: &GaussianPair, s: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    pair.validate()?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Contract(format!("time {s} outside [0, 1]")));
    }
    let d = pair.dim();
    let mut mean = vec![0.0; d];
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        mean[i] = (1.0 - s) * pair.mean1[i] + s * pair.mean0[i];
        for j in 0..d {
            cov[i][j] = (1.0 - s) * (1.0 - s) * pair.cov1[i][j] + s * s * pair.cov0[i][j];
        }
    }
    Ok((mean, cov))
}

/// Draws from `N(mean, cov)` via its Cholesky factor.
pub fn sample_gaussian(mean: &[f64], chol: &[Vec<f64>], rng: &mut impl Rng) -> Vec<f64> {
    let d = mean.len();
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    (0..d)
        .map(|i| mean[i] + (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
        .collect()
}

/// Self-consistency residual recomputed one coefficient at a time with
/// separate single-query network calls.
pub fn brute_force_sc_residual(
    net: &impl VelocityField,
    xt: &Bins,
    s: f64,
    dt: f64,
    y: &Bins,
) -> Result<f64> {
    let (rows, cols) = xt.dim();
    let first = net.eval(xt, s, dt, y)?;
    let mut mid = Bins::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let a = xt[[r, c]];
            let v = first[[r, c]];
            mid[[r, c]] = Complex64::new(a.re + dt * v.re, a.im + dt * v.im);
        }
    }
    let second = net.eval(&mid, s + dt, dt, y)?;
    let big = net.eval(xt, s, dt + dt, y)?;
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let target_re = 0.5 * first[[r, c]].re + 0.5 * second[[r, c]].re;
            let target_im = 0.5 * first[[r, c]].im + 0.5 * second[[r, c]].im;
            let dr = big[[r, c]].re - target_re;
            let di = big[[r, c]].im - target_im;
            total += dr * dr + di * di;
        }
    }
    Ok(total / (2 * rows * cols) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_error: f64,
}

/// Compares the analytic gradient of `<cotangent, net(queries)>` against
/// central differences at `probes_per_group` random parameters per tensor.
pub fn gradient_check(
    net: &mut VelocityNet,
    queries_x: &[(Bins, Bins, f64, f64)],
    cotangents: &[Bins],
    probes_per_group: usize,
    h: f64,
    rng: &mut impl Rng,
) -> Result<GradCheck> {
    let inner = |net: &VelocityNet| -> Result<f64> {
        let q: Vec<Query<'_>> = queries_x
            .iter()
            .map(|(x, y, t, dt)| Query { x, y, t: *t, dt: *dt })
            .collect();
        let out = net.forward(&q)?;
        let mut acc = 0.0;
        for (o, c) in out.iter().zip(cotangents) {
            for (a, b) in o.iter().zip(c.iter()) {
                acc += a.re * b.re + a.im * b.im;
            }
        }
        Ok(acc)
    };
    net.zero_grad();
    {
        let q: Vec<Query<'_>> = queries_x
            .iter()
            .map(|(x, y, t, dt)| Query { x, y, t: *t, dt: *dt })
            .collect();
        net.forward_record(&q)?;
    }
    net.backward(cotangents)?;
    let analytic = net.grad().to_vec();
    net.zero_grad();
    let mut worst = 0.0_f64;
    let mut probes = 0;
    for (_, range) in net.param_groups() {
        for _ in 0..probes_per_group {
            let i = rng.random_range(range.clone());
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let plus = inner(net)?;
            net.params_mut()[i] = orig - h;
            let minus = inner(net)?;
            net.params_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
            probes += 1;
        }
    }
    Ok(GradCheck {
        probes,
        max_rel_error: worst,
    })
}

fn random_bins(rows: usize, cols: usize, rng: &mut impl Rng) -> Bins {
    Bins::from_shape_fn((rows, cols), |_| {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        Complex64::new(a, b)
    })
}

/// A small random network and an admissible self-consistency item for it.
pub fn random_sc_instance(rng: &mut impl Rng) -> Result<(VelocityNet, TrainItem)> {
    let cfg = NetConfig {
        bins: rng.random_range(1..=4),
        context: rng.random_range(0..=1),
        hidden: rng.random_range(3..=8),
        blocks: rng.random_range(1..=3),
        embed_dim: 2 * rng.random_range(1..=3),
    };
    let net = VelocityNet::new_random(cfg, rng)?;
    let frames = rng.random_range(1..=4);
    let level = rng.random_range(1..=7);
    let dt = 0.5f64.powi(level);
    let slots = (0.5 / dt) as u64;
    let t = rng.random_range(0..slots) as f64 * 2.0 * dt;
    let item = TrainItem {
        x0: random_bins(cfg.bins, frames, rng),
        x1: random_bins(cfg.bins, frames, rng),
        y: random_bins(cfg.bins, frames, rng),
        query: StepQuery {
            t,
            dt,
            kind: TargetKind::SelfConsistency,
        },
    };
    Ok((net, item))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub name: String,
    pub max: f64,
    pub tolerance: f64,
}

impl Discrepancy {
    pub fn passed(&self) -> bool {
        self.max <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub instances: usize,
    pub seed: u64,
    /// Replace the main self-consistency path with a sign-flipped variant.
    pub inject_sign_flip: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            instances: 1000,
            seed: 0,
            inject_sign_flip: false,
        }
    }
}

/// Runs every oracle/main-path comparison and reports the worst discrepancy of each.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<Discrepancy>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Vec::new();

    let mut worst = 0.0_f64;
    for _ in 0..opts.instances {
        let (net, item) = random_sc_instance(&mut rng)?;
        let items = std::slice::from_ref(&item);
        let main = if opts.inject_sign_flip {
            flow::sc_residuals_sign_flipped(&net, items)?[0]
        } else {
            flow::sc_residuals(&net, items)?[0]
        };
        let xt = {
            let s = item.query.t;
            let mut x = Bins::zeros(item.x0.dim());
            for ((o, a), b) in x.iter_mut().zip(item.x0.iter()).zip(item.x1.iter()) {
                *o = b * (1.0 - s) + a * s;
            }
            x
        };
        let oracle = brute_force_sc_residual(&net, &xt, item.query.t, item.query.dt, &item.y)?;
        worst = worst.max((main - oracle).abs() / oracle.abs().max(1.0));
    }
    report.push(Discrepancy {
        name: "self-consistency residual".into(),
        max: worst,
        tolerance: 1e-10,
    });

    let mut worst = 0.0_f64;
    for _ in 0..opts.instances.min(100) {
        let x0 = random_bins(3, 2, &mut rng);
        let x1 = random_bins(3, 2, &mut rng);
        let flat = |b: &Bins| b.iter().flat_map(|c| [c.re, c.im]).collect::<Vec<_>>();
        let expected = exact_pair_velocity(&flat(&x0), &flat(&x1))?;
        for k in 0..10 {
            let got = flow::interpolate(&x0, &x1, k as f64 / 9.0)?.v_target;
            for (g, e) in flat(&got).iter().zip(&expected) {
                worst = worst.max((g - e).abs());
            }
        }
    }
    report.push(Discrepancy {
        name: "pair velocity".into(),
        max: worst,
        tolerance: 1e-10,
    });

    let mut worst = 0.0_f64;
    for _ in 0..opts.instances.min(100) {
        let x0 = random_bins(2, 3, &mut rng);
        let x1 = random_bins(2, 3, &mut rng);
        let s: f64 = rng.random_range(0.0..=1.0);
        let got = flow::interpolate(&x0, &x1, s)?.xt;
        for ((g, a), b) in got.iter().zip(x0.iter()).zip(x1.iter()) {
            let want_re = (1.0 - s) * b.re + s * a.re;
            let want_im = (1.0 - s) * b.im + s * a.im;
            worst = worst.max((g.re - want_re).abs()).max((g.im - want_im).abs());
        }
    }
    report.push(Discrepancy {
        name: "interpolant".into(),
        max: worst,
        tolerance: 1e-10,
    });

    let cfg = NetConfig {
        bins: 3,
        context: 1,
        hidden: 6,
        blocks: 3,
        embed_dim: 4,
    };
    let mut net = VelocityNet::new_random(cfg, &mut rng)?;
    let queries: Vec<(Bins, Bins, f64, f64)> = vec![
        (random_bins(3, 3, &mut rng), random_bins(3, 3, &mut rng), 0.5, 0.25),
        (random_bins(3, 2, &mut rng), random_bins(3, 2, &mut rng), 0.0, 1.0 / 128.0),
    ];
    let cot = vec![random_bins(3, 3, &mut rng), random_bins(3, 2, &mut rng)];
    let g = gradient_check(&mut net, &queries, &cot, 20, 1e-4, &mut rng)?;
    report.push(Discrepancy {
        name: format!("gradient vs central differences ({} probes)", g.probes),
        max: g.max_rel_error,
        tolerance: 1e-5,
    });
    Ok(report)
}
