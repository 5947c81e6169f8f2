//! Output-directory plumbing: atomic writes, digests and the run manifest.

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

use msfa::error::{Error, Result};

/// Collects the files written by one command and renders the manifest.
pub struct OutputSet {
    dir: PathBuf,
    outputs: Vec<(String, String)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Write via a temporary sibling and rename, so interrupted runs never leave
/// a partial file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutputSet {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    /// Write one output file atomically and record its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.outputs.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Write the manifest describing this run. Must be called last so every
    /// output digest is included.
    pub fn finish_manifest(
        &mut self,
        command: &str,
        master_seed: Option<u64>,
        params: Value,
        inputs: &[PathBuf],
        stats: Value,
    ) -> Result<()> {
        let mut input_records = Vec::new();
        for path in inputs {
            let bytes = fs::read(path)?;
            input_records.push(serde_json::json!({
                "path": path.display().to_string(),
                "sha256": sha256_hex(&bytes),
            }));
        }
        let outputs: Vec<Value> = self
            .outputs
            .iter()
            .map(|(name, digest)| serde_json::json!({ "file": name, "sha256": digest }))
            .collect();
        let manifest = serde_json::json!({
            "command": command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "created_utc": Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
            "master_seed": master_seed,
            "params": params,
            "inputs": input_records,
            "outputs": outputs,
            "stats": stats,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }
}

/// Render a float so that reading it back reproduces the same bits.
pub fn render_f64(v: f64) -> String {
    format!("{v}")
}

pub fn render_opt_f64(v: Option<f64>) -> String {
    v.map(render_f64).unwrap_or_default()
}

/// Exit code for an error per the documented convention: 2 validation,
/// 3 numerical, 4 i/o.
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        msfa::ErrorCategory::Validation => 2,
        msfa::ErrorCategory::Numerical => 3,
        msfa::ErrorCategory::Io => 4,
    }
}
