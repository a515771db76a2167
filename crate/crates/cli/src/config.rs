//! Flat JSON run configuration. Flags win over config values; relative
//! paths in a config file are taken relative to the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

/// A usage or configuration problem (exit status 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

const KNOWN_KEYS: &[&str] = &[
    // paths
    "phonemes",
    "lexicon",
    "vocab",
    "list",
    "pretokenized",
    "alignments",
    "em_model",
    "tree",
    "params",
    "scenarios",
    "phoneme_vectors",
    // dims
    "d",
    "d_enc",
    "d_att",
    "layers",
    // modes
    "encoding",
    "pemb",
    "alignment",
    "phoneme_query",
    "root",
    // training and decoding
    "seed",
    "steps",
    "lr",
    "optimizer",
    "gate_warmup",
    "batch_size",
    "beam",
    "max_symbols",
    // aligner
    "max_g",
    "max_p",
    "iters",
    "tol",
    "many_to_many",
    "deletions",
];

#[derive(Debug, Default)]
pub struct RunConfig {
    values: Map<String, Value>,
    base: PathBuf,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let values: Map<String, Value> = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        if let Some(k) = values.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(usage(format!(
                "config {}: unknown key {k:?}",
                path.display()
            )));
        }
        Ok(Self {
            values,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    fn raw<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                serde_json::from_value(v.clone())
                    .map_err(|e| usage(format!("config key {key:?}: {e}")))
            })
            .transpose()
    }

    /// `flag` if given, else the config value, else `default`.
    pub fn value<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.raw(key),
        }
    }

    /// A mode string parsed with `FromStr`.
    pub fn mode<T: FromStr>(&self, flag: Option<String>, key: &str, default: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let s = self.value(flag, key, default.to_string())?;
        s.parse().map_err(|e| usage(format!("{key}: {e}")))
    }

    /// An on/off switch; the config may hold a bool or "on"/"off".
    pub fn switch(&self, flag: Option<bool>, key: &str, default: bool) -> Result<bool> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(Value::String(s)) => {
                parse_switch(s).map_err(|e| usage(format!("config key {key:?}: {e}")))
            }
            Some(v) => Err(usage(format!(
                "config key {key:?}: expected on/off, got {v}"
            ))),
        }
    }

    pub fn opt_input(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        let path = match flag {
            Some(p) => Some(p),
            None => self.raw::<PathBuf>(key)?.map(|p| self.base.join(p)),
        };
        if let Some(p) = &path {
            if !p.is_file() {
                return Err(usage(format!("{key}: no such file {}", p.display())));
            }
        }
        Ok(path)
    }

    /// A required input file that must exist.
    pub fn input(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        self.opt_input(flag, key)?.ok_or_else(|| {
            usage(format!(
                "missing --{} (or {key:?} in the config)",
                key.replace('_', "-")
            ))
        })
    }
}

pub fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
