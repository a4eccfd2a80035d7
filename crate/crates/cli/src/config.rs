//! Flat `key=value` files: optional input config for `train`, and the run
//! manifest written next to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Keys a config file may set. Manifest-only keys are accepted and ignored
/// so a manifest can be fed back in as a config.
pub const KEYS: &[&str] = &[
    "env",
    "algo",
    "epochs",
    "horizon",
    "rollouts",
    "alpha",
    "lambda",
    "additive",
    "r",
    "c",
    "grid",
    "policy",
    "hidden",
    "seed",
    "start",
    "instance",
    "out",
    "critic-lr",
    "advantage-weighted",
    "record-wallclock",
];

const MANIFEST_ONLY: &[&str] = &["version", "metrics", "checkpoint", "manifest"];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key=value", i + 1);
            };
            let key = key.trim();
            if MANIFEST_ONLY.contains(&key) {
                continue;
            }
            if !KEYS.contains(&key) {
                bail!("line {}: unknown key '{key}'", i + 1);
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Ordered `key=value` lines.
#[derive(Debug, Default)]
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# sgpo run manifest\n");
        for (k, v) in &self.lines {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}
