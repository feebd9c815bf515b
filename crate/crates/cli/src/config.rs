//! Run configuration: defaults, TOML file, `SFM_` environment overrides.
//!
//! Environment variables map onto config keys by stripping the prefix,
//! lowercasing and splitting sections on a double underscore:
//! `SFM_SEED=3`, `SFM_TRAIN__LR=0.001`, `SFM_PRIOR__KIND=D`,
//! `SFM_PATHS__DATASET=/data/synth`. Values are parsed as TOML literals and
//! fall back to plain strings. Precedence: defaults < file < environment < flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shortcut_fm::flow::{LossWeights, StepSchedule};
use shortcut_fm::net::NetConfig;
use shortcut_fm::priors::{PriorKind, PriorSpec};
use shortcut_fm::spectro::StftConfig;
use shortcut_fm::train::TrainHyper;
use shortcut_fm::{Error, Result};

pub const ENV_PREFIX: &str = "SFM_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub stft: StftSection,
    pub net: NetSection,
    pub prior: PriorSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_count: usize,
    pub valid_count: usize,
    pub test_count: usize,
    /// Seconds per utterance.
    pub duration: f64,
    pub train_snrs: Vec<f64>,
    pub test_snrs: Vec<f64>,
    /// Train on white and pink noise only and test on harmonic babble.
    pub unseen_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub fft_size: usize,
    pub hop: usize,
    pub window: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub context: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub kind: String,
    pub sigma_end: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub dt_min: f64,
    pub dt_max: f64,
    pub rate_sc: f64,
    pub lambda_sc: f64,
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub segment_frames: usize,
    /// Epoch at which the learning rate is multiplied by `lr_decay`; 0 disables.
    pub lr_decay_epoch: usize,
    pub lr_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub steps: usize,
    pub k_list: Vec<usize>,
    pub priors: Vec<String>,
    /// Chunk length in seconds for enhancement.
    pub chunk_seconds: f64,
    pub bench_repetitions: usize,
    pub bench_seconds: f64,
    /// Frame length in samples for segmental SNR.
    pub seg_frame: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// May contain `{prior}`, replaced by the prior code when sweeping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_count: 200,
            valid_count: 20,
            test_count: 40,
            duration: 2.0,
            train_snrs: vec![0.0, 5.0, 10.0, 15.0],
            test_snrs: vec![2.5, 7.5, 12.5, 17.5],
            unseen_noise: false,
        }
    }
}

impl Default for StftSection {
    fn default() -> Self {
        let d = StftConfig::default();
        Self {
            fft_size: d.fft_size,
            hop: d.hop,
            window: d.window.to_string(),
        }
    }
}

impl Default for NetSection {
    fn default() -> Self {
        let d = NetConfig::default();
        Self {
            context: d.context,
            hidden: d.hidden,
            blocks: d.blocks,
            embed_dim: d.embed_dim,
        }
    }
}

impl Default for PriorSection {
    fn default() -> Self {
        let d = PriorSpec::new(PriorKind::S);
        Self {
            kind: d.kind.to_string(),
            sigma_end: d.sigma_end,
            alpha: d.alpha,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = StepSchedule::default();
        Self {
            dt_min: s.dt_min,
            dt_max: s.dt_max,
            rate_sc: s.rate_sc,
            lambda_sc: LossWeights::default().lambda_sc,
            rho: s.rho,
            epochs: 20,
            batch_size: 16,
            lr: 1e-4,
            segment_frames: 32,
            lr_decay_epoch: 0,
            lr_decay: 0.1,
        }
    }
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            steps: 1,
            k_list: vec![1, 2, 4, 8, 16],
            priors: vec!["S".into()],
            chunk_seconds: 2.0,
            bench_repetitions: 5,
            bench_seconds: 2.0,
            seg_frame: 256,
        }
    }
}

impl RunConfig {
    /// Defaults, then the optional file, then `SFM_*` variables from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in env {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                set_path(&mut table, &rest.to_ascii_lowercase(), &value)?;
            }
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Normalized form: every field written out explicitly.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.stft_config()?.validate()?;
        self.net_config()?.validate()?;
        self.prior_spec()?.validate()?;
        self.train_hyper().validate()?;
        self.infer_priors()?;
        let d = &self.data;
        if !(d.duration > 0.0 && d.duration.is_finite()) {
            return Err(Error::Config("data.duration must be positive".into()));
        }
        if d.train_snrs.is_empty() || d.test_snrs.is_empty() {
            return Err(Error::Config("SNR lists must not be empty".into()));
        }
        if d.train_snrs.iter().chain(&d.test_snrs).any(|s| !s.is_finite()) {
            return Err(Error::Config("SNRs must be finite".into()));
        }
        let t = &self.train;
        if !(t.lr >= 0.0 && t.lr.is_finite()) || !(t.lr_decay > 0.0 && t.lr_decay.is_finite()) {
            return Err(Error::Config("train.lr must be >= 0 and train.lr_decay > 0".into()));
        }
        let i = &self.infer;
        if i.steps == 0 || i.k_list.is_empty() || i.k_list.contains(&0) {
            return Err(Error::Config("step counts must be at least 1".into()));
        }
        if !(i.chunk_seconds > 0.0) || !(i.bench_seconds > 0.0) || i.seg_frame == 0 {
            return Err(Error::Config("chunk/bench lengths and seg_frame must be positive".into()));
        }
        if i.bench_repetitions < 3 {
            return Err(Error::Config("infer.bench_repetitions must be at least 3".into()));
        }
        Ok(())
    }

    pub fn stft_config(&self) -> Result<StftConfig> {
        Ok(StftConfig {
            fft_size: self.stft.fft_size,
            hop: self.stft.hop,
            window: self.stft.window.parse()?,
        })
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        Ok(NetConfig {
            bins: self.stft_config()?.bins(),
            context: self.net.context,
            hidden: self.net.hidden,
            blocks: self.net.blocks,
            embed_dim: self.net.embed_dim,
        })
    }

    pub fn prior_spec(&self) -> Result<PriorSpec> {
        Ok(PriorSpec {
            kind: self.prior.kind.parse()?,
            sigma_end: self.prior.sigma_end,
            alpha: self.prior.alpha,
        })
    }

    pub fn infer_priors(&self) -> Result<Vec<PriorKind>> {
        if self.infer.priors.is_empty() {
            return Err(Error::Config("infer.priors must not be empty".into()));
        }
        self.infer.priors.iter().map(|p| p.parse()).collect()
    }

    pub fn train_hyper(&self) -> TrainHyper {
        let t = &self.train;
        TrainHyper {
            schedule: StepSchedule {
                dt_min: t.dt_min,
                dt_max: t.dt_max,
                rate_sc: t.rate_sc,
                rho: t.rho,
            },
            weights: LossWeights { lambda_sc: t.lambda_sc },
            batch_size: t.batch_size,
            segment_frames: t.segment_frames,
        }
    }

    pub fn chunk_len(&self) -> usize {
        (self.infer.chunk_seconds * shortcut_fm::spectro::SAMPLE_RATE as f64).round().max(1.0) as usize
    }
}

fn set_path(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split("__").collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{ENV_PREFIX}{}`", key.to_ascii_uppercase())));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn defaults_follow_training_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.train.dt_min, 1.0 / 128.0);
        assert_eq!(c.train.rate_sc, 0.25);
        assert_eq!(c.train.lambda_sc, 0.1);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!((c.train.epochs, c.train.batch_size), (20, 16));
        assert_eq!(c.net_config().unwrap().bins, 129);
        c.validate().unwrap();
    }

    #[test]
    fn round_trip_is_stable() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.prior.kind = "D".into();
        c.paths.dataset = Some("data".into());
        c.infer.k_list = vec![1, 16];
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("seed = 5\n[train]\nlr = 0.002\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.train.lr, 0.002);
        assert_eq!(c.train.batch_size, 16);
    }

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "seed = 5\n[prior]\nkind = \"G\"\n").unwrap();
        let c = RunConfig::load(
            Some(&p),
            env(&[
                ("SFM_SEED", "9"),
                ("SFM_TRAIN__LR", "0.003"),
                ("SFM_PRIOR__KIND", "F"),
                ("SFM_PATHS__DATASET", "/tmp/some data"),
                ("SFM_INFER__K_LIST", "[1, 4]"),
                ("HOME", "/root"),
            ]),
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.lr, 0.003);
        assert_eq!(c.prior.kind, "F");
        assert_eq!(c.paths.dataset, Some(PathBuf::from("/tmp/some data")));
        assert_eq!(c.infer.k_list, vec![1, 4]);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "[prior]\nkind = \"Q\"\n",
            "[train]\nrho = 0.5\n",
            "[stft]\nfft_size = 256\nhop = 256\n",
            "[infer]\nk_list = [0]\n",
            "unknown = 1\n",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
        assert!(matches!(
            RunConfig::load(None, env(&[("SFM_TRAIN__", "1")])),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::load(Some(Path::new("/nonexistent/run.toml")), env(&[])),
            Err(Error::Io { .. })
        ));
    }
}
