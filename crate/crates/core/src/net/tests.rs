use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn small() -> NetConfig {
    NetConfig {
        bins: 3,
        context: 1,
        hidden: 6,
        blocks: 3,
        embed_dim: 4,
    }
}

fn random_bins(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Bins {
    Bins::from_shape_fn((rows, cols), |_| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(scale * re, scale * im)
    })
}

fn dot(a: &[Bins], b: &[Bins]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

#[test]
fn fresh_network_predicts_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = VelocityNet::new(small(), &mut rng).unwrap();
    let x = random_bins(3, 4, 3.0, &mut rng);
    let y = random_bins(3, 4, 3.0, &mut rng);
    let out = net.eval(&x, 0.3, 0.25, &y).unwrap();
    assert!(out.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = VelocityNet::new_random(small(), &mut rng).unwrap();
    let x = random_bins(3, 5, 1.0, &mut rng);
    let y = random_bins(3, 5, 1.0, &mut rng);
    assert_eq!(net.eval(&x, 0.5, 0.5, &y).unwrap(), net.eval(&x, 0.5, 0.5, &y).unwrap());
}

#[test]
fn shape_and_range_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = VelocityNet::new(small(), &mut rng).unwrap();
    let x = random_bins(3, 4, 1.0, &mut rng);
    let wrong = random_bins(4, 4, 1.0, &mut rng);
    assert!(matches!(net.eval(&x, 0.0, 0.5, &wrong), Err(Error::Contract(_))));
    assert!(matches!(net.eval(&wrong, 0.0, 0.5, &wrong), Err(Error::Contract(_))));
    assert!(matches!(net.eval(&x, 1.5, 0.5, &x), Err(Error::Contract(_))));
    assert!(matches!(net.eval(&x, 0.0, 0.0, &x), Err(Error::Contract(_))));
}

#[test]
fn backward_requires_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = VelocityNet::new(small(), &mut rng).unwrap();
    let c = random_bins(3, 2, 1.0, &mut rng);
    assert!(matches!(net.backward(std::slice::from_ref(&c)), Err(Error::State(_))));
    let x = random_bins(3, 2, 1.0, &mut rng);
    net.forward_record(&[Query { x: &x, y: &x, t: 0.0, dt: 1.0 }]).unwrap();
    net.backward(std::slice::from_ref(&c)).unwrap();
    // the tape is consumed
    assert!(matches!(net.backward(&[c]), Err(Error::State(_))));
}

#[test]
fn gradient_is_linear_in_cotangent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = VelocityNet::new_random(small(), &mut rng).unwrap();
    let x = random_bins(3, 4, 1.0, &mut rng);
    let y = random_bins(3, 4, 1.0, &mut rng);
    let q = [Query { x: &x, y: &y, t: 0.25, dt: 0.125 }];
    let c = random_bins(3, 4, 1.0, &mut rng);

    net.forward_record(&q).unwrap();
    net.backward(&[Bins::zeros((3, 4))]).unwrap();
    assert!(net.grad().iter().all(|g| *g == 0.0));

    net.forward_record(&q).unwrap();
    net.backward(std::slice::from_ref(&c)).unwrap();
    let single = net.grad().to_vec();
    net.zero_grad();
    net.forward_record(&q).unwrap();
    net.backward(&[c.mapv(|v| v * 2.0)]).unwrap();
    for (a, b) in single.iter().zip(net.grad()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = VelocityNet::new_random(small(), &mut rng).unwrap();
    let xs: Vec<Bins> = (0..2).map(|i| random_bins(3, 3 + i, 1.0, &mut rng)).collect();
    let ys: Vec<Bins> = (0..2).map(|i| random_bins(3, 3 + i, 1.0, &mut rng)).collect();
    let cot: Vec<Bins> = (0..2).map(|i| random_bins(3, 3 + i, 1.0, &mut rng)).collect();
    let queries = [
        Query { x: &xs[0], y: &ys[0], t: 0.5, dt: 0.25 },
        Query { x: &xs[1], y: &ys[1], t: 0.0, dt: 1.0 / 128.0 },
    ];
    net.forward_record(&queries).unwrap();
    net.backward(&cot).unwrap();
    let analytic = net.grad().to_vec();
    let h = 1e-4;
    let mut worst = 0.0_f64;
    for (_, range) in net.param_groups() {
        for _ in 0..4 {
            let i = rng.random_range(range.clone());
            let orig = net.params[i];
            net.params[i] = orig + h;
            let plus = dot(&net.forward(&queries).unwrap(), &cot);
            net.params[i] = orig - h;
            let minus = dot(&net.forward(&queries).unwrap(), &cot);
            net.params[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn bounded_inputs_give_finite_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = VelocityNet::new_random(NetConfig::default(), &mut rng).unwrap();
    let x = random_bins(129, 6, 10.0, &mut rng).mapv(|v| Complex64::new(v.re.clamp(-10.0, 10.0), v.im.clamp(-10.0, 10.0)));
    for &(t, dt) in &[(0.0, 1.0), (0.5, 0.5), (0.99, 1.0 / 128.0)] {
        let out = net.eval(&x, t, dt, &x).unwrap();
        assert!(out.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        assert_eq!(out.dim(), x.dim());
    }
}

#[test]
fn one_step_makes_output_depend_on_step_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = VelocityNet::new(small(), &mut rng).unwrap();
    let x = random_bins(3, 4, 1.0, &mut rng);
    let y = random_bins(3, 4, 1.0, &mut rng);
    let c = random_bins(3, 4, 1.0, &mut rng);
    net.forward_record(&[Query { x: &x, y: &y, t: 0.0, dt: 0.5 }]).unwrap();
    net.backward(&[c]).unwrap();
    let mut opt = AdamState::new(net.params().len(), 1e-2);
    opt.step(&mut net).unwrap();
    let half = net.eval(&x, 0.0, 0.5, &y).unwrap();
    let quarter = net.eval(&x, 0.0, 0.25, &y).unwrap();
    assert_ne!(half, quarter);
    assert_eq!(net.params().len(), small().param_count());
}

fn scalar_net() -> VelocityNet {
    let cfg = NetConfig {
        bins: 1,
        context: 0,
        hidden: 1,
        blocks: 1,
        embed_dim: 2,
    };
    VelocityNet::zeros(cfg).unwrap()
}

#[test]
fn adam_first_step_is_learning_rate() {
    let mut net = scalar_net();
    let n = net.params().len();
    let mut opt = AdamState::new(n, 1e-3);
    let mut expected_m = 0.0;
    let mut expected_v = 0.0;
    for step in 1..=5 {
        let before = net.params()[0];
        net.grad.iter_mut().for_each(|g| *g = 1.0);
        opt.step(&mut net).unwrap();
        // hand recurrence for g = 1
        expected_m = 0.9 * expected_m + 0.1;
        expected_v = 0.999 * expected_v + 0.001;
        let m_hat = expected_m / (1.0 - 0.9f64.powi(step));
        let v_hat = expected_v / (1.0 - 0.999f64.powi(step));
        let delta = 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((before - net.params()[0] - delta).abs() < 1e-15);
        assert!((delta - 1e-3).abs() < 1e-10);
        assert!(net.grad().iter().all(|g| *g == 0.0));
        assert_eq!(opt.step, step as u64);
    }
}

#[test]
fn adam_noop_cases() {
    let mut net = scalar_net();
    net.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p = i as f64);
    let before = net.params().to_vec();
    let mut opt = AdamState::new(before.len(), 1e-3);
    opt.step(&mut net).unwrap();
    assert_eq!(net.params(), &before[..]);

    let mut frozen = AdamState::new(before.len(), 0.0);
    net.grad.iter_mut().for_each(|g| *g = 0.7);
    frozen.step(&mut net).unwrap();
    assert_eq!(net.params(), &before[..]);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut net = scalar_net();
    let mut opt = AdamState::new(net.params().len(), 1e-3);
    net.grad.iter_mut().for_each(|g| *g = 1.0);
    opt.step(&mut net).unwrap();
    net.grad[2] = f64::NAN;
    let before = net.params().to_vec();
    match opt.step(&mut net) {
        Err(Error::Training { step, .. }) => assert_eq!(step, 2),
        other => panic!("expected training error, got {other:?}"),
    }
    assert_eq!(net.params(), &before[..]);
}
