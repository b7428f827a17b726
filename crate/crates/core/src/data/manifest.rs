//! JSON manifest written next to generated datasets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synthetic::SyntheticTaskSpec;
use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub name: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: SyntheticTaskSpec,
    pub files: Vec<ManifestFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| DataError::Invalid(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Recomputes every checksum relative to `dir`; returns the names of
    /// files whose content no longer matches.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>, DataError> {
        let mut stale = Vec::new();
        for f in &self.files {
            if sha256_file(&dir.join(&f.name))? != f.sha256 {
                stale.push(f.name.clone());
            }
        }
        Ok(stale)
    }
}
