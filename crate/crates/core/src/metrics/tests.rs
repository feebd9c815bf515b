use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::spectro::SAMPLE_RATE;

fn wf(v: &[f64]) -> Waveform {
    Waveform::new(v.to_vec(), SAMPLE_RATE).unwrap()
}

fn random(n: usize, rng: &mut impl Rng) -> Waveform {
    wf(&(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

#[test]
fn si_sdr_hand_example() {
    // alpha = 1, error = [0, 1, 0, -1]: equal energies
    let r = wf(&[1.0, 0.0, -1.0, 0.0]);
    let e = wf(&[1.0, 1.0, -1.0, -1.0]);
    assert!(si_sdr(&r, &e).unwrap().abs() < 1e-12);
}

#[test]
fn si_sdr_mean_removal_applies_first() {
    // After centring, [1, 1] carries no signal at all.
    assert_eq!(si_sdr(&wf(&[1.0, 0.0]), &wf(&[1.0, 1.0])).unwrap(), -SI_SDR_CEILING_DB);
    let r = wf(&[0.3, -0.2, 0.5, 0.1]);
    let shifted = wf(&[1.3, 0.8, 1.5, 1.1]);
    assert_eq!(si_sdr(&r, &shifted).unwrap(), SI_SDR_CEILING_DB);
}

#[test]
fn si_sdr_sentinel_for_scaled_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random(1000, &mut rng);
    assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CEILING_DB);
    assert_eq!(si_sdr(&r, &r.scaled(2.0)).unwrap(), SI_SDR_CEILING_DB);
    assert_eq!(si_sdr(&r, &r.scaled(-0.01)).unwrap(), SI_SDR_CEILING_DB);
}

#[test]
fn si_sdr_known_ratio() {
    // orthogonal zero-mean error at a quarter of the energy: 10 log10(4)
    let r = wf(&[1.0, -1.0, 1.0, -1.0]);
    let e = wf(&[1.5, -0.5, 0.5, -1.5]);
    let expected = 10.0 * 4.0f64.log10();
    assert!((si_sdr(&r, &e).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn si_sdr_preconditions() {
    assert!(matches!(si_sdr(&wf(&[0.5, 0.5]), &wf(&[1.0, 0.0])), Err(Error::Domain(_))));
    assert!(matches!(si_sdr(&wf(&[1.0, 0.0]), &wf(&[1.0])), Err(Error::Contract(_))));
}

#[test]
fn si_sdr_scale_invariance_over_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(2..300);
        let r = random(n, &mut rng);
        let e = random(n, &mut rng);
        let mag = 10f64.powf(rng.random_range(-2.0..2.0));
        let c = if rng.random_bool(0.5) { mag } else { -mag };
        let a = si_sdr(&r, &e).unwrap();
        let b = si_sdr(&r, &e.scaled(c)).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b} at c={c}");
    }
}

proptest! {
    #[test]
    fn si_sdr_below_sentinel_unless_multiple(
        r in prop::collection::vec(-1.0f64..1.0, 8..64),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = r.len();
        let reference = wf(&r);
        prop_assume!(reference.rms() > 0.05);
        let e = random(n, &mut rng);
        prop_assert!(si_sdr(&reference, &e).unwrap() < SI_SDR_CEILING_DB);
    }
}

#[test]
fn seg_snr_of_perfect_estimate_is_ceiling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = random(1000, &mut rng);
    assert_eq!(seg_snr(&r, &r, 100).unwrap(), SEG_SNR_CEILING_DB);
}

#[test]
fn seg_snr_constructed_ten_db_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frame = 160;
    let mut r = Vec::new();
    let mut e = Vec::new();
    for f in 0..20 {
        let sig: Vec<f64> = (0..frame).map(|_| rng.random_range(-0.5..0.5)).collect();
        if f % 4 == 3 {
            // silent frames with arbitrary estimate are excluded
            r.extend(std::iter::repeat_n(0.0, frame));
            e.extend((0..frame).map(|_| rng.random_range(-1.0..1.0)));
            continue;
        }
        let n: Vec<f64> = (0..frame).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ps: f64 = sig.iter().map(|v| v * v).sum();
        let pn: f64 = n.iter().map(|v| v * v).sum();
        let g = (ps / pn / 10.0).sqrt();
        e.extend(sig.iter().zip(&n).map(|(s, n)| s + g * n));
        r.extend(sig);
    }
    let v = seg_snr(&wf(&r), &wf(&e), frame).unwrap();
    assert!((v - 10.0).abs() < 0.1, "{v}");
}

#[test]
fn seg_snr_clamps_floor_and_rejects_silence() {
    let r = wf(&[0.1; 64]);
    let e = wf(&[-5.0; 64]);
    assert_eq!(seg_snr(&r, &e, 16).unwrap(), SEG_SNR_FLOOR_DB);
    assert!(matches!(seg_snr(&wf(&[0.0; 64]), &e, 16), Err(Error::Domain(_))));
    assert!(seg_snr(&r, &e, 0).is_err());
}

#[test]
fn lsd_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = StftConfig::default();
    let r = random(4096, &mut rng);
    assert_eq!(log_spectral_distance(&r, &r, &cfg).unwrap(), 0.0);
    let d = log_spectral_distance(&r, &r.scaled(2.0), &cfg).unwrap();
    assert!((d - 2f64.ln()).abs() < 1e-9, "{d}");
    let mut shifted = r.samples.clone();
    shifted.rotate_right(cfg.hop);
    assert!(log_spectral_distance(&r, &wf(&shifted), &cfg).unwrap() > 0.0);
}

#[test]
fn rtf_of_sleeping_stub() {
    let y = wf(&vec![0.0; SAMPLE_RATE as usize]);
    let m = measure_rtf(
        |_| {
            std::thread::sleep(Duration::from_millis(50));
            Ok(())
        },
        &y,
        3,
    )
    .unwrap();
    assert_eq!(m.audio_duration, 1.0);
    assert!((m.rtf - 0.05).abs() < 0.01, "{}", m.rtf);
    assert_eq!(m.rtf, m.wall_time / m.audio_duration);
}

#[test]
fn rtf_protocol_errors() {
    let y = wf(&[0.0; 16]);
    assert!(matches!(measure_rtf(|_| Ok(()), &y, 2), Err(Error::Config(_))));
    let mut calls = 0;
    let r = measure_rtf(
        |_| {
            calls += 1;
            if calls == 2 {
                Err(Error::Inference { step: 1, msg: "boom".into() })
            } else {
                Ok(())
            }
        },
        &y,
        3,
    );
    assert!(matches!(r, Err(Error::Inference { .. })));
    assert!(measure_rtf(|_| Ok(()), &y, 3).unwrap().rtf > 0.0);
}

#[test]
fn stat_matches_tabulated_t_quantiles() {
    let s = Stat::of(&[0.0, 2.0]).unwrap();
    assert_eq!(s.mean, 1.0);
    // t(0.975, 1 dof) = 12.7062, standard error 1
    assert!((s.ci95.unwrap() - 12.706_204_736).abs() < 1e-6);
    let s = Stat::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    // t(0.975, 4 dof) = 2.7764, standard error sqrt(2.5 / 5)
    assert!((s.ci95.unwrap() - 2.776_445_105 * 0.5f64.sqrt()).abs() < 1e-6);
    assert_eq!(Stat::of(&[7.0]).unwrap().ci95, None);
    assert!(Stat::of(&[]).is_err());
}

fn sample_report() -> EvalReport {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rep = EvalReport::default();
    for prior in [PriorKind::S, PriorKind::F] {
        for k in [1, 4] {
            for u in 0..5 {
                rep.push(EvalRow {
                    utterance: format!("utt{u:03}"),
                    prior,
                    steps: k,
                    nfe: k,
                    si_sdr_db: rng.random_range(-5.0..20.0),
                    seg_snr_db: rng.random_range(-10.0..35.0),
                    lsd: rng.random_range(0.0..3.0),
                    rtf: rng.random_range(0.001..0.1),
                });
            }
        }
    }
    rep
}

#[test]
fn aggregates_recompute_from_rows() {
    let rep = sample_report();
    let aggs = rep.aggregates().unwrap();
    assert_eq!(aggs.len(), 4);
    for a in &aggs {
        assert_eq!(a.n, 5);
        for (c, stat) in a.stats.iter().enumerate() {
            let vals: Vec<f64> = rep
                .rows
                .iter()
                .filter(|r| r.prior == a.prior && r.steps == a.steps)
                .map(|r| r.values()[c])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((stat.mean - mean).abs() < 1e-12);
            assert!(stat.ci95.unwrap() > 0.0);
        }
    }
    assert!(rep.aggregate(PriorKind::G, 1).is_err());
}

#[test]
fn csv_round_trip_and_layout() {
    let rep = sample_report();
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "utterance,prior,steps,nfe,si_sdr_db,seg_snr_db,lsd,rtf");
    assert_eq!(lines.iter().filter(|l| l.starts_with("#agg,")).count(), 4);
    assert_eq!(lines.len(), 1 + 20 + 4);
    let back = EvalReport::read_csv(&buf[..]).unwrap();
    assert_eq!(back, rep);

    let mut long = Vec::new();
    rep.write_long_csv(&mut long).unwrap();
    let long = String::from_utf8(long).unwrap();
    assert_eq!(long.lines().count(), 1 + 20 * 4);
}
