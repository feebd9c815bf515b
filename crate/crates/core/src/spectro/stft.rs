use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// Complex bins laid out as `[frequency, frame]`.
pub type Bins = Array2<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    SqrtHann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let hann = |i: usize| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
        (0..n)
            .map(|i| match self {
                WindowKind::Hann => hann(i),
                WindowKind::SqrtHann => hann(i).sqrt(),
                WindowKind::Rectangular => 1.0,
            })
            .collect()
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::Hann => "hann",
            WindowKind::SqrtHann => "sqrt-hann",
            WindowKind::Rectangular => "rectangular",
        })
    }
}

impl FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WindowKind::Hann),
            "sqrt-hann" => Ok(WindowKind::SqrtHann),
            "rectangular" => Ok(WindowKind::Rectangular),
            other => Err(Error::Config(format!("unknown window kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 256,
            hop: 128,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Checks the hop/window pair admits exact weighted overlap-add inversion:
    /// the summed squared window must stay bounded away from zero everywhere.
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fft_size must be even and at least 2, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop <= fft_size, got hop={} fft_size={}",
                self.hop, self.fft_size
            )));
        }
        let w = self.window.coefficients(self.fft_size);
        let peak = w.iter().map(|v| v * v).fold(0.0, f64::max);
        let floor = (0..self.hop)
            .map(|n| {
                (n..self.fft_size)
                    .step_by(self.hop)
                    .map(|i| w[i] * w[i])
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        if floor <= 1e-10 * peak {
            return Err(Error::Config(format!(
                "{} window with fft_size={} hop={} does not overlap-add to a nonzero envelope",
                self.window, self.fft_size, self.hop
            )));
        }
        Ok(())
    }

    /// Frame count for a signal of `len` samples (centered framing).
    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + 1
    }

    fn norm(&self, window: &[f64]) -> f64 {
        window.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Bins,
    pub config: StftConfig,
    /// Length of the waveform this was computed from.
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn num_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.bins.ncols()
    }

    pub fn with_bins(&self, bins: Bins) -> Result<Self> {
        if bins.dim() != self.bins.dim() {
            return Err(Error::Contract(format!(
                "bins of shape {:?} do not match spectrogram shape {:?}",
                bins.dim(),
                self.bins.dim()
            )));
        }
        Ok(Self {
            bins,
            config: self.config,
            signal_len: self.signal_len,
            sample_rate: self.sample_rate,
        })
    }
}

/// Centered STFT. Frames are zero-padded by `fft_size / 2` on both sides and
/// scaled by the inverse window norm so white noise keeps its per-sample variance.
pub fn stft(w: &Waveform, c: &StftConfig) -> Result<ComplexSpectrogram> {
    c.validate()?;
    let n = c.fft_size;
    let half = n / 2;
    let window = c.window.coefficients(n);
    let scale = 1.0 / c.norm(&window);
    let frames = c.frames_for(w.len());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut bins = Bins::zeros((c.bins(), frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..frames {
        let start = (j * c.hop) as isize - half as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let v = if idx >= 0 && (idx as usize) < w.len() {
                w.samples[idx as usize]
            } else {
                0.0
            };
            *b = Complex64::new(v * window[i] * scale, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..c.bins() {
            bins[[k, j]] = buf[k];
        }
    }
    Ok(ComplexSpectrogram {
        bins,
        config: *c,
        signal_len: w.len(),
        sample_rate: w.sample_rate,
    })
}

/// Weighted overlap-add inverse of [`stft`]. Imaginary parts of the DC and
/// Nyquist bins are discarded.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let c = &s.config;
    c.validate()?;
    if s.num_bins() != c.bins() {
        return Err(Error::Contract(format!(
            "spectrogram has {} bins, config expects {}",
            s.num_bins(),
            c.bins()
        )));
    }
    if s.signal_len == 0 {
        return Err(Error::Domain("spectrogram has zero signal length".into()));
    }
    let n = c.fft_size;
    let half = n / 2;
    let window = c.window.coefficients(n);
    let unscale = c.norm(&window) / n as f64;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let padded_len = (s.num_frames() - 1) * c.hop + n;
    let mut acc = vec![0.0; padded_len];
    let mut env = vec![0.0; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..s.num_frames() {
        buf[0] = Complex64::new(s.bins[[0, j]].re, 0.0);
        buf[half] = Complex64::new(s.bins[[half, j]].re, 0.0);
        for k in 1..half {
            buf[k] = s.bins[[k, j]];
            buf[n - k] = s.bins[[k, j]].conj();
        }
        ifft.process(&mut buf);
        let off = j * c.hop;
        for i in 0..n {
            acc[off + i] += window[i] * buf[i].re * unscale;
            env[off + i] += window[i] * window[i];
        }
    }
    let samples = (0..s.signal_len)
        .map(|i| {
            let e = env[i + half];
            if e > 1e-12 {
                acc[i + half] / e
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, s.sample_rate)
}
