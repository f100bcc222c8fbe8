use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use eaef_core::generation::BackendConfig;
use eaef_core::{FusionConfig, LexiconToggles, ProviderConfig};
use serde::{Deserialize, Serialize};

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_k() -> usize {
    eaef_core::vecstore::DEFAULT_K
}

fn default_lambda() -> f64 {
    1.0
}

/// `eaef serve` settings. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub index: PathBuf,
    pub lexicons: PathBuf,
    pub calibration: PathBuf,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub toggles: LexiconToggles,
    #[serde(default)]
    pub projection_seed: Option<u64>,
    #[serde(default)]
    pub history_window: Option<usize>,
    /// Directory served at `/` (e.g. a built chat UI).
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading service config {}", path.display()))?;
        let mut cfg: ServiceConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing service config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.index, &mut cfg.lexicons, &mut cfg.calibration] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = cfg.static_dir.as_mut() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    /// Fails fast on missing inputs. The index file itself may be absent
    /// until the first ingest, but its directory must exist.
    pub fn check_paths(&self) -> anyhow::Result<()> {
        if !self.lexicons.is_dir() {
            bail!("lexicon directory {} does not exist", self.lexicons.display());
        }
        if !self.calibration.is_file() {
            bail!("calibration file {} does not exist", self.calibration.display());
        }
        let parent = match self.index.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        if !parent.is_dir() {
            bail!("index directory {} does not exist", parent.display());
        }
        if let Some(dir) = &self.static_dir {
            if !dir.is_dir() {
                bail!("static directory {} does not exist", dir.display());
            }
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            lambda: self.lambda,
            projection_seed: self
                .projection_seed
                .unwrap_or(eaef_core::embedding::DEFAULT_PROJECTION_SEED),
            heads: 1,
        }
    }
}
