//! Versioned little-endian checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "SCFMCKPT"
//! version      u32      1
//! net          5 x u32  bins, context, hidden, blocks, embed_dim
//! stft         u32 fft_size, u32 hop, u8 window (0 hann, 1 sqrt-hann, 2 rectangular)
//! prior        u8 kind (0 G, 1 S, 2 D, 3 F), f64 sigma_end, f64 alpha
//! epochs_done  u64
//! params       u64 count, then count x f64
//! adam         u8 present; if 1: f64 lr, beta1, beta2, eps, u64 step, m[count], v[count]
//! rng          u8 present; if 1: 32-byte ChaCha8 seed, u64 stream, u128 word position
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::net::{AdamState, NetConfig, VelocityNet};
use crate::priors::{PriorKind, PriorSpec};
use crate::spectro::{StftConfig, WindowKind};

pub const MAGIC: &[u8; 8] = b"SCFMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub stft: StftConfig,
    pub prior: PriorSpec,
    pub epochs_done: u64,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(net: &VelocityNet, stft: StftConfig, prior: PriorSpec) -> Self {
        Self {
            net: *net.config(),
            stft,
            prior,
            epochs_done: 0,
            params: net.params().to_vec(),
            adam: None,
            rng: None,
        }
    }

    pub fn network(&self) -> Result<VelocityNet> {
        VelocityNet::from_params(self.net, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 8 * self.params.len() * 3);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.net.bins, self.net.context, self.net.hidden, self.net.blocks, self.net.embed_dim] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&(self.stft.fft_size as u32).to_le_bytes());
        b.extend_from_slice(&(self.stft.hop as u32).to_le_bytes());
        b.push(match self.stft.window {
            WindowKind::Hann => 0,
            WindowKind::SqrtHann => 1,
            WindowKind::Rectangular => 2,
        });
        b.push(self.prior.kind.code());
        b.extend_from_slice(&self.prior.sigma_end.to_le_bytes());
        b.extend_from_slice(&self.prior.alpha.to_le_bytes());
        b.extend_from_slice(&self.epochs_done.to_le_bytes());
        b.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        put_f64s(&mut b, &self.params);
        match &self.adam {
            None => b.push(0),
            Some(a) => {
                b.push(1);
                for v in [a.lr, a.beta1, a.beta2, a.eps] {
                    b.extend_from_slice(&v.to_le_bytes());
                }
                b.extend_from_slice(&a.step.to_le_bytes());
                put_f64s(&mut b, &a.m);
                put_f64s(&mut b, &a.v);
            }
        }
        match &self.rng {
            None => b.push(0),
            Some(r) => {
                b.push(1);
                b.extend_from_slice(&r.seed);
                b.extend_from_slice(&r.stream.to_le_bytes());
                b.extend_from_slice(&r.word_pos.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let net = NetConfig {
            bins: r.u32()? as usize,
            context: r.u32()? as usize,
            hidden: r.u32()? as usize,
            blocks: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
        };
        net.validate().map_err(|e| Error::Format(format!("architecture descriptor: {e}")))?;
        let stft = StftConfig {
            fft_size: r.u32()? as usize,
            hop: r.u32()? as usize,
            window: match r.u8()? {
                0 => WindowKind::Hann,
                1 => WindowKind::SqrtHann,
                2 => WindowKind::Rectangular,
                w => return Err(Error::Format(format!("unknown window code {w}"))),
            },
        };
        let kind = r.u8()?;
        let kind = PriorKind::from_code(kind)
            .ok_or_else(|| Error::Format(format!("unknown prior code {kind}")))?;
        let prior = PriorSpec {
            kind,
            sigma_end: r.f64()?,
            alpha: r.f64()?,
        };
        let epochs_done = r.u64()?;
        let n = r.u64()? as usize;
        if n != net.param_count() {
            return Err(Error::Format(format!(
                "parameter count {n} does not match architecture ({})",
                net.param_count()
            )));
        }
        let params = r.f64s(n)?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let lr = r.f64()?;
                let beta1 = r.f64()?;
                let beta2 = r.f64()?;
                let eps = r.f64()?;
                let step = r.u64()?;
                let m = r.f64s(n)?;
                let v = r.f64s(n)?;
                Some(AdamState {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    step,
                    m,
                    v,
                })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        let rng = match r.u8()? {
            0 => None,
            1 => {
                let mut seed = [0u8; 32];
                seed.copy_from_slice(r.take(32)?);
                let stream = r.u64()?;
                let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
                Some(RngState {
                    seed,
                    stream,
                    word_pos,
                })
            }
            f => return Err(Error::Format(format!("bad rng flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            net,
            stft,
            prior,
            epochs_done,
            params,
            adam,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn put_f64s(b: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, RngCore};

    use super::*;

    fn sample(rng: &mut ChaCha8Rng) -> Checkpoint {
        let cfg = NetConfig {
            bins: 5,
            context: 1,
            hidden: 7,
            blocks: 2,
            embed_dim: 4,
        };
        let net = VelocityNet::new_random(cfg, rng).unwrap();
        let mut ck = Checkpoint::new(&net, StftConfig::default(), PriorSpec::new(PriorKind::D));
        let mut adam = AdamState::new(cfg.param_count(), 1e-4);
        adam.step = 17;
        adam.m.iter_mut().for_each(|v| *v = rng.random::<f64>() - 0.5);
        adam.v.iter_mut().for_each(|v| *v = rng.random::<f64>() * 1e-3);
        ck.adam = Some(adam);
        ck.rng = Some(RngState::capture(rng));
        ck.epochs_done = 3;
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ck = sample(&mut rng);
        // awkward bit patterns survive too
        ck.params[0] = -0.0;
        ck.params[1] = f64::MIN_POSITIVE / 4.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ck.params));
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn restored_rng_continues_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        rng.set_stream(3);
        for _ in 0..13 {
            rng.next_u32();
        }
        let mut restored = RngState::capture(&rng).restore();
        for _ in 0..100 {
            assert_eq!(rng.next_u64(), restored.next_u64());
        }
    }

    #[test]
    fn restored_network_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ck = sample(&mut rng);
        assert_eq!(ck.network().unwrap().params(), &ck.params[..]);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bytes = sample(&mut rng).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[8] = 2;
        let err = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format(_))));
        // hidden width no longer matches the stored parameter count
        let mut bad = bytes;
        bad[20] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_names_path() {
        let err = Checkpoint::load("/nonexistent/x.ckpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.ckpt"), "{err}");
    }
}
