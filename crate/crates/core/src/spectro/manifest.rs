use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::wav::read_wav;
use super::{mix, MixSpec, NoiseKind, Waveform};
use crate::error::{Error, Result};

/// One utterance: a clean file plus the recipe for its noisy mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub clean_path: PathBuf,
    pub noise_kind: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
}

impl ManifestRow {
    pub fn mix_spec(&self) -> MixSpec {
        MixSpec {
            snr_db: self.snr_db,
            noise_kind: self.noise_kind,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Clean/noisy pair regenerated from a manifest row.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub snr_db: f64,
    pub noise_kind: NoiseKind,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_utterance(&self, row: &ManifestRow) -> Result<Utterance> {
        let clean = read_wav(self.resolve(&row.clean_path))?;
        let (noisy, _) = mix(&clean, &row.mix_spec())?;
        Ok(Utterance {
            id: row.id.clone(),
            clean,
            noisy,
            snr_db: row.snr_db,
            noise_kind: row.noise_kind,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Utterance>> {
        self.rows.iter().map(|r| self.load_utterance(r)).collect()
    }
}
