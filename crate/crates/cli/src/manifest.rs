use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

/// A file produced by a command, held in memory until the run has succeeded.
pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Output {
    pub fn new(name: &str, bytes: Vec<u8>) -> Output {
        Output { name: name.to_string(), bytes }
    }

    pub fn json<T: Serialize>(name: &str, value: &T) -> CliResult<Output> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(fri_core::Error::from)?;
        bytes.push(b'\n');
        Ok(Output::new(name, bytes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: toml::Table,
    pub seed: u64,
    pub workers: Option<usize>,
    pub mc_fallback: bool,
    pub code_version: String,
    /// seconds since the Unix epoch
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<FileDigest>,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every output, then the manifest listing their digests.
pub fn write_all(dir: &Path, outputs: &[Output], mut manifest: RunManifest) -> CliResult<RunManifest> {
    std::fs::create_dir_all(dir)?;
    manifest.outputs.clear();
    for o in outputs {
        std::fs::write(dir.join(&o.name), &o.bytes)?;
        manifest.outputs.push(FileDigest { file: o.name.clone(), bytes: o.bytes.len(), sha256: digest(&o.bytes) });
    }
    manifest.finished = now();
    let mut text = serde_json::to_string_pretty(&manifest).map_err(fri_core::Error::from)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(digest(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
