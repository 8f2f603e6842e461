//! Run manifests: what produced an output directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::io_err;
use crate::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to content hash.
    pub outputs: BTreeMap<String, String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// Command-specific facts, such as the severity ladder used.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the compact JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, seed: u64, config: &T, started_unix_ms: u64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: config_hash(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
            details: serde_json::Value::Null,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Hashes every regular file directly inside `dir` except the manifest.
    pub fn record_outputs(&mut self, dir: &Path) -> Result<()> {
        let mut names = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            if path.is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        for name in names.into_iter().filter(|n| n != MANIFEST_FILE) {
            self.outputs.insert(name.clone(), sha256_file(&dir.join(&name))?);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::io::write_json(&dir.join(MANIFEST_FILE), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn outputs_exclude_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let mut m = RunManifest::new("test", 1, &serde_json::json!({"k": 1}), 0).unwrap();
        m.write(dir.path()).unwrap();
        m.record_outputs(dir.path()).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs["a.txt"], sha256_hex(b"abc"));
    }
}
