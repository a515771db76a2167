//! Provenance record written next to every output: input and output
//! hashes, seed, tool version and the resolved settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    inputs: BTreeMap<&'a str, FileHash>,
    outputs: Vec<FileHash>,
    settings: &'a BTreeMap<String, Value>,
}

#[derive(Debug)]
pub struct Run {
    command: &'static str,
    seed: Option<u64>,
    inputs: Vec<(&'static str, PathBuf)>,
    pub settings: BTreeMap<String, Value>,
}

impl Run {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            seed: None,
            inputs: Vec::new(),
            settings: BTreeMap::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn input(&mut self, role: &'static str, path: &Path) {
        self.inputs.push((role, path.to_path_buf()));
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.settings.insert(
            key.to_string(),
            serde_json::to_value(value).expect("setting serializes"),
        );
    }

    /// Writes `<primary>.manifest.json` covering every file in `outputs`.
    pub fn write(&self, primary: &Path, outputs: &[&Path]) -> Result<PathBuf> {
        let hash = |p: &Path| -> Result<FileHash> {
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        };
        let manifest = Manifest {
            tool: "tcpgen",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            inputs: self
                .inputs
                .iter()
                .map(|(role, p)| Ok((*role, hash(p)?)))
                .collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| hash(p)).collect::<Result<_>>()?,
            settings: &self.settings,
        };
        let path = manifest_path(primary);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}
