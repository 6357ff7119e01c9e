use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one run, written next to its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Config,
    pub seed: u64,
    /// Input path to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

/// Current time, or `SOURCE_DATE_EPOCH` when set so that reruns produce
/// identical manifests.
pub fn now() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok());
    let t = match fixed.and_then(|s| chrono::DateTime::from_timestamp(s, 0)) {
        Some(t) => t,
        None => chrono::Utc::now(),
    };
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
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

pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    config: Config,
    seed: u64,
    inputs: Vec<PathBuf>,
    started_at: String,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &Config, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config: config.clone(),
            seed,
            inputs: Vec::new(),
            started_at: now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn write(self, out_dir: &Path) -> anyhow::Result<()> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let m = RunManifest {
            command: self.command,
            args: self.args,
            config: self.config,
            seed: self.seed,
            inputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            finished_at: now(),
        };
        crate::write_json(&out_dir.join(MANIFEST_FILE), &m)
    }
}
