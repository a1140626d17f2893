//! Run manifests: a text record of the exact configuration, seed and input
//! file hashes behind every output directory, written before any artifact.
//!
//! Manifests carry a wall-clock timestamp and are therefore the one output
//! excluded from byte-for-byte reproducibility; checkpoints, code stores and
//! CSVs are hash-stable.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: Vec<(PathBuf, String)>,
    pub config_snapshot: String,
    pub created_unix: u64,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot hash input {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, inputs: &[&Path], config_snapshot: String) -> Result<Self> {
        let mut hashed = Vec::with_capacity(inputs.len());
        for path in inputs {
            hashed.push((path.to_path_buf(), hash_file(path)?));
        }
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            inputs: hashed,
            config_snapshot,
            created_unix,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# nodequant run manifest\n");
        out.push_str(&format!("version={}\n", self.version));
        out.push_str(&format!("command={}\n", self.command));
        out.push_str(&format!("created_unix={}\n", self.created_unix));
        out.push_str(&format!("seed={}\n", self.seed));
        for (input, hash) in &self.inputs {
            out.push_str(&format!("input={}\tsha256={hash}\n", input.display()));
        }
        out.push_str("--- config ---\n");
        out.push_str(&self.config_snapshot);
        std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
    }

    /// Input hashes recorded by an earlier run.
    pub fn read_input_hashes(path: &Path) -> Result<Vec<(PathBuf, String)>> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let mut out = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("input=") {
                let Some((file, hash)) = rest.split_once("\tsha256=") else {
                    bail!("malformed manifest line: {line}");
                };
                out.push((PathBuf::from(file), hash.to_string()));
            }
        }
        Ok(out)
    }

    /// Check current inputs against hashes from a previous manifest.
    pub fn verify_against(path: &Path, inputs: &[&Path]) -> Result<()> {
        let recorded = Self::read_input_hashes(path)?;
        for input in inputs {
            let current = hash_file(input)?;
            if let Some((_, old)) = recorded.iter().find(|(p, _)| p == input) {
                if *old != current {
                    bail!(
                        "input {} changed since the recorded run (manifest {})",
                        input.display(),
                        path.display()
                    );
                }
            }
        }
        Ok(())
    }
}
