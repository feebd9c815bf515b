//! Speech-like synthetic signals and additive noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{rms, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const CLEAN_PEAK: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    /// Harmonic stack with 1/h rolloff, vibrato and syllabic envelope.
    Harmonic,
    /// Harmonic stack shaped by two formant resonances.
    Vowel,
    /// Harmonic stack with a wide pitch sweep.
    Glide,
}

impl SignalKind {
    pub const ALL: [SignalKind; 3] = [SignalKind::Harmonic, SignalKind::Vowel, SignalKind::Glide];
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::Harmonic => "harmonic",
            SignalKind::Vowel => "vowel",
            SignalKind::Glide => "glide",
        })
    }
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(SignalKind::Harmonic),
            "vowel" => Ok(SignalKind::Vowel),
            "glide" => Ok(SignalKind::Glide),
            other => Err(Error::Config(format!("unknown signal kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    White,
    Pink,
    HarmonicBabble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::HarmonicBabble];
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::HarmonicBabble => "harmonic-babble",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            "harmonic-babble" | "babble" => Ok(NoiseKind::HarmonicBabble),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

/// Deterministic speech-like test signal at 16 kHz with peak amplitude 0.8.
pub fn synth_clean(kind: SignalKind, duration: f64, seed: u64) -> Result<Waveform> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Domain(format!("duration must be positive, got {duration}")));
    }
    let sr = SAMPLE_RATE as f64;
    let len = ((duration * sr).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let f0_base: f64 = rng.random_range(100.0..240.0);
    let vibrato_rate = rng.random_range(4.0..6.5);
    let vibrato_depth = rng.random_range(0.01..0.04);
    let (glide_start, glide_end): (f64, f64) = match kind {
        SignalKind::Glide => (rng.random_range(0.6..0.9), rng.random_range(1.2..1.6)),
        _ => (rng.random_range(0.9..1.0), rng.random_range(1.0..1.15)),
    };
    let formants = [rng.random_range(300.0..800.0), rng.random_range(900.0..2200.0)];
    let envelope = syllable_envelope(len, sr, &mut rng);

    let max_f0 = f0_base * glide_start.max(glide_end) * (1.0 + vibrato_depth);
    let harmonics = ((4000.0 / max_f0).floor() as usize).max(1);
    let phase_offsets: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut phase = 0.0;
    let mut samples = Vec::with_capacity(len);
    for (i, env) in envelope.iter().enumerate() {
        let t = i as f64 / sr;
        let progress = i as f64 / len as f64;
        let glide = glide_start + (glide_end - glide_start) * progress;
        let f0 = f0_base * glide * (1.0 + vibrato_depth * (2.0 * PI * vibrato_rate * t).sin());
        phase += 2.0 * PI * f0 / sr;
        let mut v = 0.0;
        for (h, off) in phase_offsets.iter().enumerate() {
            let order = (h + 1) as f64;
            let amp = match kind {
                SignalKind::Vowel => {
                    let fh = order * f0;
                    let shape: f64 = formants
                        .iter()
                        .map(|fc| (-((fh - fc) / 150.0).powi(2)).exp())
                        .sum();
                    (shape + 0.05) / order.sqrt()
                }
                _ => 1.0 / order,
            };
            v += amp * (order * phase + off).sin();
        }
        samples.push(v * env);
    }
    let peak = samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|v| *v *= CLEAN_PEAK / peak);
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Raised-cosine syllables separated by short pauses.
fn syllable_envelope(len: usize, sr: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut env = vec![0.0; len];
    let mut pos = (rng.random_range(0.0..0.05) * sr) as usize;
    while pos < len {
        let syl = (rng.random_range(0.15..0.35) * sr) as usize;
        let gain = rng.random_range(0.5..1.0);
        for k in 0..syl {
            if pos + k >= len {
                break;
            }
            let x = k as f64 / syl as f64;
            env[pos + k] = gain * (0.5 - 0.5 * (2.0 * PI * x).cos()).sqrt();
        }
        pos += syl + (rng.random_range(0.03..0.12) * sr) as usize;
    }
    env
}

/// Unit-scale noise of the given kind (not RMS-normalized).
pub fn noise(kind: NoiseKind, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    match kind {
        NoiseKind::White => (0..len).map(|_| StandardNormal.sample(rng)).collect(),
        NoiseKind::Pink => pink(len, rng),
        NoiseKind::HarmonicBabble => babble(len, rng),
    }
}

/// White noise shaped by 1/sqrt(f) in the frequency domain.
fn pink(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(len - k);
        *v = if f == 0 { Complex64::new(0.0, 0.0) } else { *v / (f as f64).sqrt() };
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|v| v.re / len as f64).collect()
}

/// Several detuned harmonic talkers with independent slow modulation.
fn babble(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let talkers = rng.random_range(4..=6);
    let mut out = vec![0.0; len];
    for _ in 0..talkers {
        let f0: f64 = rng.random_range(90.0..300.0);
        let detune: f64 = rng.random_range(0.995..1.005);
        let am_rate = rng.random_range(2.0..6.0);
        let am_phase = rng.random_range(0.0..2.0 * PI);
        let harmonics = ((5000.0 / f0).floor() as usize).max(1);
        let offsets: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let am = 0.6 + 0.4 * (2.0 * PI * am_rate * t + am_phase).sin();
            let mut v = 0.0;
            for (h, off) in offsets.iter().enumerate() {
                let order = (h + 1) as f64;
                let fh = order * f0 * detune.powf(order);
                v += (2.0 * PI * fh * t + off).sin() / order;
            }
            *o += am * v;
        }
    }
    out
}

/// Adds noise at the requested RMS SNR. Returns `(noisy, scaled_noise)`.
pub fn mix(clean: &Waveform, spec: &MixSpec) -> Result<(Waveform, Waveform)> {
    if !spec.snr_db.is_finite() {
        return Err(Error::Domain(format!("snr_db must be finite, got {}", spec.snr_db)));
    }
    let clean_rms = clean.rms();
    if clean_rms <= 0.0 {
        return Err(Error::Domain("clean signal is silent; SNR is undefined".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw = noise(spec.noise_kind, clean.len(), &mut rng);
    let noise_rms = rms(&raw);
    if noise_rms <= 0.0 {
        return Err(Error::Domain("generated noise is silent".into()));
    }
    let gain = clean_rms / (noise_rms * 10f64.powf(spec.snr_db / 20.0));
    let scaled: Vec<f64> = raw.iter().map(|v| v * gain).collect();
    let noisy = clean.samples.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok((
        Waveform::new(noisy, clean.sample_rate)?,
        Waveform::new(scaled, clean.sample_rate)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snr_of(clean: &Waveform, noise: &Waveform) -> f64 {
        20.0 * (clean.rms() / noise.rms()).log10()
    }

    #[test]
    fn synth_is_deterministic_and_sized() {
        let a = synth_clean(SignalKind::Harmonic, 1.0, 7).unwrap();
        let b = synth_clean(SignalKind::Harmonic, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16_000);
        assert!(a.peak() <= 1.0);
        let c = synth_clean(SignalKind::Harmonic, 1.0, 8).unwrap();
        let differing = a.samples.iter().zip(&c.samples).filter(|(x, y)| x != y).count();
        assert!(differing > 8_000, "{differing}");
    }

    #[test]
    fn every_kind_is_nonsilent() {
        for kind in SignalKind::ALL {
            let w = synth_clean(kind, 0.5, 3).unwrap();
            assert!(w.rms() > 0.05, "{kind}");
            assert!(w.peak() <= 1.0);
        }
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("speech".parse::<SignalKind>(), Err(Error::Config(_))));
        assert!(matches!("brown".parse::<NoiseKind>(), Err(Error::Config(_))));
        assert!(synth_clean(SignalKind::Vowel, 0.0, 1).is_err());
    }

    #[test]
    fn mix_hits_requested_snr() {
        let clean = synth_clean(SignalKind::Vowel, 1.0, 11).unwrap();
        let (noisy, noise) = mix(
            &clean,
            &MixSpec {
                snr_db: 10.0,
                noise_kind: NoiseKind::White,
                seed: 5,
            },
        )
        .unwrap();
        assert!((snr_of(&clean, &noise) - 10.0).abs() < 0.01);
        for i in 0..clean.len() {
            assert_eq!(noisy.samples[i], clean.samples[i] + noise.samples[i]);
        }
    }

    #[test]
    fn zero_db_balances_rms() {
        let clean = synth_clean(SignalKind::Glide, 0.5, 2).unwrap();
        let spec = MixSpec {
            snr_db: 0.0,
            noise_kind: NoiseKind::Pink,
            seed: 1,
        };
        let (_, noise) = mix(&clean, &spec).unwrap();
        assert!(snr_of(&clean, &noise).abs() < 0.01);
    }

    #[test]
    fn infinite_snr_and_silence_rejected() {
        let clean = synth_clean(SignalKind::Harmonic, 0.1, 2).unwrap();
        let inf = MixSpec {
            snr_db: f64::INFINITY,
            noise_kind: NoiseKind::White,
            seed: 1,
        };
        assert!(matches!(mix(&clean, &inf), Err(Error::Domain(_))));
        let silent = Waveform::new(vec![0.0; 100], 16_000).unwrap();
        let ok = MixSpec { snr_db: 5.0, ..inf };
        assert!(matches!(mix(&silent, &ok), Err(Error::Domain(_))));
    }

    #[test]
    fn snr_holds_across_kinds_and_draws() {
        let clean = synth_clean(SignalKind::Harmonic, 0.25, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for draw in 0..100u64 {
            let kind = NoiseKind::ALL[(draw % 3) as usize];
            let snr_db = rng.random_range(-5.0..20.0);
            let (_, noise) = mix(
                &clean,
                &MixSpec {
                    snr_db,
                    noise_kind: kind,
                    seed: draw,
                },
            )
            .unwrap();
            assert!((snr_of(&clean, &noise) - snr_db).abs() < 0.01, "{kind} {snr_db}");
        }
    }
}
