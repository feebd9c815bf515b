//! Reference-based signal metrics, RTF timing and the evaluation report.
//!
//! Conventions: SI-SDR removes the mean of both signals first and reports
//! +100 dB for a perfect (scaled) estimate. Segmental SNR clamps each frame
//! to [-10, 35] dB and skips frames whose reference RMS is below 1e-6. LSD
//! uses natural-log magnitudes with a 1e-8 floor.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::priors::PriorKind;
use crate::spectro::{stft, StftConfig, Waveform};

pub const SI_SDR_CEILING_DB: f64 = 100.0;
pub const SEG_SNR_FLOOR_DB: f64 = -10.0;
pub const SEG_SNR_CEILING_DB: f64 = 35.0;
pub const LSD_FLOOR: f64 = 1e-8;
const SILENT_FRAME_RMS: f64 = 1e-6;

fn same_len(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::Contract(format!(
            "length mismatch: reference {} vs estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    Ok(())
}

pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    same_len(reference, estimate)?;
    let n = reference.len() as f64;
    let mr = reference.samples.iter().sum::<f64>() / n;
    let me = estimate.samples.iter().sum::<f64>() / n;
    let r: Vec<f64> = reference.samples.iter().map(|v| v - mr).collect();
    let e: Vec<f64> = estimate.samples.iter().map(|v| v - me).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr <= f64::MIN_POSITIVE {
        return Err(Error::Domain("SI-SDR undefined for a silent reference".into()));
    }
    let alpha = r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let mut target = 0.0;
    let mut resid = 0.0;
    for (a, b) in r.iter().zip(&e) {
        let t = alpha * a;
        target += t * t;
        resid += (b - t) * (b - t);
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CEILING_DB);
    }
    if resid == 0.0 {
        return Ok(SI_SDR_CEILING_DB);
    }
    Ok((10.0 * (target / resid).log10()).clamp(-SI_SDR_CEILING_DB, SI_SDR_CEILING_DB))
}

pub fn seg_snr(reference: &Waveform, estimate: &Waveform, frame: usize) -> Result<f64> {
    same_len(reference, estimate)?;
    if frame == 0 {
        return Err(Error::Contract("frame length must be positive".into()));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (r, e) in reference.samples.chunks(frame).zip(estimate.samples.chunks(frame)) {
        let sig: f64 = r.iter().map(|v| v * v).sum();
        if (sig / r.len() as f64).sqrt() < SILENT_FRAME_RMS {
            continue;
        }
        let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if err == 0.0 {
            SEG_SNR_CEILING_DB
        } else {
            10.0 * (sig / err).log10()
        };
        total += db.clamp(SEG_SNR_FLOOR_DB, SEG_SNR_CEILING_DB);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Domain("every reference frame is silent".into()));
    }
    Ok(total / used as f64)
}

pub fn log_spectral_distance(reference: &Waveform, estimate: &Waveform, config: &StftConfig) -> Result<f64> {
    same_len(reference, estimate)?;
    let r = stft(reference, config)?;
    let e = stft(estimate, config)?;
    let mut acc = 0.0;
    for (a, b) in r.bins.iter().zip(e.bins.iter()) {
        let d = a.norm().max(LSD_FLOOR).ln() - b.norm().max(LSD_FLOOR).ln();
        acc += d * d;
    }
    Ok((acc / r.bins.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtfMeasurement {
    pub wall_time: f64,
    pub audio_duration: f64,
    pub rtf: f64,
}

impl RtfMeasurement {
    pub fn new(wall_time: f64, audio_duration: f64) -> Result<Self> {
        if !(audio_duration > 0.0) || !(wall_time >= 0.0) {
            return Err(Error::Domain("RTF needs positive audio duration and wall time".into()));
        }
        // A zero reading only means the timer was too coarse.
        let wall_time = wall_time.max(1e-9);
        Ok(Self {
            wall_time,
            audio_duration,
            rtf: wall_time / audio_duration,
        })
    }
}

/// Median wall time of `repetitions` calls after one untimed warm-up.
///
/// Timing is only meaningful when nothing else is running on the machine.
pub fn measure_rtf<T>(
    mut enhancer: impl FnMut(&Waveform) -> Result<T>,
    y: &Waveform,
    repetitions: usize,
) -> Result<RtfMeasurement> {
    if repetitions < 3 {
        return Err(Error::Config(format!("need at least 3 repetitions, got {repetitions}")));
    }
    enhancer(y)?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        enhancer(y)?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    RtfMeasurement::new(median, y.duration())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub utterance: String,
    pub prior: PriorKind,
    pub steps: usize,
    pub nfe: usize,
    pub si_sdr_db: f64,
    pub seg_snr_db: f64,
    pub lsd: f64,
    pub rtf: f64,
}

impl EvalRow {
    pub const COLUMNS: [&'static str; 4] = ["si_sdr_db", "seg_snr_db", "lsd", "rtf"];

    pub fn values(&self) -> [f64; 4] {
        [self.si_sdr_db, self.seg_snr_db, self.lsd, self.rtf]
    }
}

/// Mean and 95% confidence half-width; the half-width is `None` below two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub ci95: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Stat> {
        if values.is_empty() {
            return Err(Error::Domain("statistic of an empty sample".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Ok(Stat { mean, ci95: None });
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .map_err(|e| Error::Domain(e.to_string()))?
            .inverse_cdf(0.975);
        Ok(Stat {
            mean,
            ci95: Some(t * (var / n).sqrt()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub prior: PriorKind,
    pub steps: usize,
    pub n: usize,
    /// In `EvalRow::COLUMNS` order.
    pub stats: [Stat; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    /// One aggregate per (prior, K), in first-appearance order.
    pub fn aggregates(&self) -> Result<Vec<Aggregate>> {
        let mut keys: Vec<(PriorKind, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.prior, r.steps)) {
                keys.push((r.prior, r.steps));
            }
        }
        keys.into_iter()
            .map(|(prior, steps)| {
                let group: Vec<&EvalRow> =
                    self.rows.iter().filter(|r| r.prior == prior && r.steps == steps).collect();
                let mut stats = [Stat { mean: 0.0, ci95: None }; 4];
                for (c, s) in stats.iter_mut().enumerate() {
                    let vals: Vec<f64> = group.iter().map(|r| r.values()[c]).collect();
                    *s = Stat::of(&vals)?;
                }
                Ok(Aggregate {
                    prior,
                    steps,
                    n: group.len(),
                    stats,
                })
            })
            .collect()
    }

    pub fn aggregate(&self, prior: PriorKind, steps: usize) -> Result<Aggregate> {
        self.aggregates()?
            .into_iter()
            .find(|a| a.prior == prior && a.steps == steps)
            .ok_or_else(|| Error::Domain(format!("no rows for prior {prior}, K={steps}")))
    }

    /// Header, one row per (utterance, prior, K), then `#agg` lines:
    /// `#agg,prior,steps,n,` followed by mean and CI half-width per metric column.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let header = ["utterance", "prior", "steps", "nfe"]
            .into_iter()
            .chain(EvalRow::COLUMNS);
        w.write_record(header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.utterance.clone(), r.prior.to_string(), r.steps.to_string(), r.nfe.to_string()];
            rec.extend(r.values().iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        for a in self.aggregates()? {
            let mut rec = vec!["#agg".to_string(), a.prior.to_string(), a.steps.to_string(), a.n.to_string()];
            for s in a.stats {
                rec.push(s.mean.to_string());
                rec.push(s.ci95.map(|c| c.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    /// Reads the per-utterance rows back; aggregate lines are skipped.
    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.get(0).is_some_and(|f| f.starts_with('#')) {
                continue;
            }
            if rec.len() != 8 {
                return Err(Error::Format(format!("expected 8 fields, found {}", rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Format(format!("bad number {:?}", &rec[i])))
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse().map_err(|_| Error::Format(format!("bad count {:?}", &rec[i])))
            };
            rows.push(EvalRow {
                utterance: rec[0].to_string(),
                prior: rec[1].parse()?,
                steps: int(2)?,
                nfe: int(3)?,
                si_sdr_db: num(4)?,
                seg_snr_db: num(5)?,
                lsd: num(6)?,
                rtf: num(7)?,
            });
        }
        Ok(Self { rows })
    }

    /// Plot-ready long format: `utterance,prior,steps,nfe,metric,value`.
    pub fn write_long_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["utterance", "prior", "steps", "nfe", "metric", "value"])
            .map_err(csv_err)?;
        for r in &self.rows {
            for (name, v) in EvalRow::COLUMNS.iter().zip(r.values()) {
                w.write_record([
                    r.utterance.clone(),
                    r.prior.to_string(),
                    r.steps.to_string(),
                    r.nfe.to_string(),
                    name.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests;
