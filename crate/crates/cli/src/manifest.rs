//! Run manifests: what a command was given and what it produced.
//!
//! The run id hashes everything except timings, so identical invocations on
//! identical inputs share it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read `{}`", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Digest identifying a dataset by the digests of its two files.
pub fn dataset_digest(grades_sha256: &str, activity_sha256: &str) -> String {
    sha256_hex(format!("grades:{grades_sha256}\nactivity:{activity_sha256}\n").as_bytes())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    /// Summary values of the run, such as EM iteration counts.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, serde_json::Value>,
    pub run_id: String,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: BTreeMap::new(),
            run_id: String::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Records an input file by name and content digest.
    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<String> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot open {role} file `{}`", path.display()))?;
        let sha256 = sha256_hex(&bytes);
        let file = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
        self.inputs.push(InputDigest { role: role.to_owned(), file, sha256: sha256.clone() });
        Ok(sha256)
    }

    pub fn input_digest(&self, role: &str) -> Option<&str> {
        self.inputs.iter().find(|i| i.role == role).map(|i| i.sha256.as_str())
    }

    /// Fixes the run id. Call once all inputs and configuration are known.
    pub fn seal(&mut self) -> &str {
        let key = serde_json::json!({
            "tool": self.tool,
            "version": self.version,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
        });
        self.run_id = sha256_hex(key.to_string().as_bytes())[..16].to_owned();
        &self.run_id
    }

    pub fn run_id(&self) -> Option<&str> {
        (!self.run_id.is_empty()).then_some(self.run_id.as_str())
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(phase.to_owned()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut w = crate::data::create(&dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
