//! Run manifests and atomic output plumbing. Every command emits exactly one
//! manifest recording what went in (by content hash) and what came out, so a
//! rerun can be checked for reproducibility without re-reading the inputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// sha256 of the config file bytes, when a config was given.
    pub config_hash: Option<String>,
    /// sha256 per input file, keyed by the path as given.
    pub input_hashes: BTreeMap<String, String>,
    /// every seed that fed randomness in this run, keyed by role
    pub seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
    pub output_paths: Vec<String>,
}

impl RunManifest {
    pub fn begin(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: None,
            input_hashes: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            output_paths: Vec::new(),
        }
    }

    pub fn record_config(&mut self, path: &Path) -> Result<(), CliError> {
        self.config_hash = Some(hash_file(path)?);
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.input_hashes
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn record_seed(&mut self, role: &str, seed: u64) {
        self.seeds.insert(role.to_string(), seed);
    }

    pub fn record_output(&mut self, path: &Path) {
        self.output_paths.push(path.display().to_string());
    }

    /// Stamps the end time and writes `manifest.json` into `out_dir`.
    pub fn finish(mut self, out_dir: &Path) -> Result<(), CliError> {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        let path = out_dir.join("manifest.json");
        self.output_paths.push(path.display().to_string());
        let body = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?;
        write_atomic(&path, body.as_bytes())
    }
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(hash_bytes(&bytes))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Writes via a temp file in the same directory plus rename, so readers never
/// observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", tmp.display())))?;
    f.write_all(bytes)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", tmp.display())))?;
    f.sync_all()
        .map_err(|e| CliError::Runtime(format!("sync {}: {e}", tmp.display())))?;
    drop(f);
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("rename to {}: {e}", path.display())))?;
    Ok(())
}
