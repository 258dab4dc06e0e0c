use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Record of one invocation: enough to re-run it and check the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Config file given on the command line, if any.
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, keyed by path relative to `out_dir`.
    pub artifacts: BTreeMap<String, String>,
    /// Effective configuration after command-line overrides.
    pub config: Config,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing manifest")?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}
