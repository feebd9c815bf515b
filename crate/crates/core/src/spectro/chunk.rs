use super::Waveform;
use crate::error::{Error, Result};

/// Splits `w` into non-overlapping chunks of exactly `chunk_len` samples.
/// The final chunk is zero-padded; [`reassemble`] trims it back.
pub fn chunk(w: &Waveform, chunk_len: usize) -> Result<Vec<Waveform>> {
    if chunk_len == 0 {
        return Err(Error::Domain("chunk length must be positive".into()));
    }
    if w.samples.is_empty() {
        return Err(Error::Domain("cannot chunk an empty waveform".into()));
    }
    Ok(w.samples
        .chunks(chunk_len)
        .map(|c| {
            let mut samples = c.to_vec();
            samples.resize(chunk_len, 0.0);
            Waveform {
                samples,
                sample_rate: w.sample_rate,
            }
        })
        .collect())
}

/// Concatenates chunks and trims to `original_len` samples.
pub fn reassemble(chunks: &[Waveform], original_len: usize) -> Result<Waveform> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::Domain("no chunks to reassemble".into()))?;
    let mut samples: Vec<f64> = chunks.iter().flat_map(|c| c.samples.iter().copied()).collect();
    if samples.len() < original_len {
        return Err(Error::Contract(format!(
            "chunks hold {} samples, fewer than the original {original_len}",
            samples.len()
        )));
    }
    samples.truncate(original_len);
    Waveform::new(samples, first.sample_rate)
}
