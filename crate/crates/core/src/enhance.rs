//! Waveform-in, waveform-out inference with fixed-length chunking.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::VelocityField;
use crate::priors::PriorSpec;
use crate::sampler::OdeSampler;
use crate::spectro::{chunk, istft, reassemble, stft, StftConfig, Waveform};
use crate::train::input_gain;

/// Default chunk: two seconds at 16 kHz, the training utterance length.
pub const DEFAULT_CHUNK_LEN: usize = 32_000;

pub struct Enhancer<'a, F: VelocityField> {
    pub field: &'a F,
    pub stft: StftConfig,
    pub prior: PriorSpec,
    pub chunk_len: usize,
}

impl<'a, F: VelocityField> Enhancer<'a, F> {
    pub fn new(field: &'a F, stft: StftConfig, prior: PriorSpec) -> Self {
        Self {
            field,
            stft,
            prior,
            chunk_len: DEFAULT_CHUNK_LEN,
        }
    }

    /// Enhances `noisy` with `steps` Euler steps per chunk. Returns the
    /// estimate (same sample count and scale as the input) and the total
    /// number of network evaluations.
    pub fn run(&self, noisy: &Waveform, steps: usize, rng: &mut impl Rng) -> Result<(Waveform, usize)> {
        if steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        self.stft.validate()?;
        let g = input_gain(noisy);
        let scaled = noisy.scaled(g);
        let mut sampler = OdeSampler::new();
        let mut nfe = 0;
        let mut out = Vec::new();
        for c in chunk(&scaled, self.chunk_len)? {
            let y = stft(&c, &self.stft)?;
            let x = sampler.enhance(self.field, &y, &self.prior, steps, rng)?;
            nfe += sampler.nfe_count();
            out.push(istft(&x)?);
        }
        let w = reassemble(&out, noisy.len())?;
        Ok((w.scaled(1.0 / g), nfe))
    }
}

/// Per-utterance RNG stream: the run seed picks the key, the utterance id
/// picks the stream, so results do not depend on processing order.
pub fn utterance_rng(seed: u64, id: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}
