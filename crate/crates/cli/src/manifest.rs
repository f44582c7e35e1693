//! The run manifest.
//!
//! Every stage records what it wrote in `manifest.toml` next to the
//! artifacts: the hash of the resolved config, the global seed, and a
//! SHA-256 checksum per file. Identical configs and inputs therefore
//! produce byte-identical manifests, and the manifest alone identifies
//! which settings produced which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    /// SHA-256 of the resolved run configuration.
    pub config_hash: String,
    /// Global seed of the run.
    pub seed: u64,
    /// Artifact file name -> SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let manifest =
            toml::from_str(&text).with_context(|| format!("corrupt {}", path.display()))?;
        Ok(Some(manifest))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        let text = toml::to_string(self).context("serialize manifest")?;
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

/// Hashes `names` (paths relative to `dir`) and folds them into the
/// manifest. Entries from a run with a different config hash or seed are
/// dropped first — they describe files this configuration did not produce.
pub fn record(dir: &Path, config_hash: &str, seed: u64, names: &[&str]) -> Result<Manifest> {
    let mut manifest = match Manifest::load(dir)? {
        Some(m) if m.config_hash == config_hash && m.seed == seed => m,
        _ => Manifest { config_hash: config_hash.to_string(), seed, ..Manifest::default() },
    };
    for name in names {
        let hash = file_sha256(&dir.join(name))?;
        manifest.artifacts.insert((*name).to_string(), hash);
    }
    manifest.save(dir)?;
    Ok(manifest)
}
