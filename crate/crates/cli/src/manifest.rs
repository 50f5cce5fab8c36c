//! Artifact emission and the reproducibility manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use replica_sync::output::Table;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Contents of `manifest.json`. Holds nothing run-specific beyond the inputs
/// and the outputs' checksums, so reruns produce the same file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialises every artifact through one writer so the output directory only
/// ever sees complete files in a fixed order.
pub struct Emitter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Emitter {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(Artifact { file: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    /// Re-reads the serialised table against its header before committing it.
    pub fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        let mut buf = Vec::new();
        table.write(&mut buf)?;
        let header: Vec<&str> = table.header().iter().map(String::as_str).collect();
        Table::read(buf.as_slice(), &header).with_context(|| format!("schema check of {name}"))?;
        self.bytes(name, &buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    pub fn finish(self, command: &str, cfg: &ExperimentConfig) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_sha256: sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
            config: cfg.clone(),
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut em = Emitter::new(dir.path()).unwrap();
        em.bytes("a.txt", b"abc").unwrap();
        let mut t = Table::new(&["x"]);
        t.push(vec!["1".into()]).unwrap();
        em.table("t.csv", &t).unwrap();
        let m = em.finish("test", &ExperimentConfig::default()).unwrap();
        assert_eq!(m.artifacts[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.artifacts[1].file, "t.csv");
        let back: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
