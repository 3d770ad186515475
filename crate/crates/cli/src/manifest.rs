//! Run manifests: everything needed to audit or repeat a run. Written
//! once, atomically, when the run finishes; a half-written manifest never
//! appears because the rename happens after the bytes are flushed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            use std::fmt::Write as _;
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub resolved: BTreeMap<String, String>,
    pub sources: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub failures: Vec<String>,
    pub format_versions: BTreeMap<String, u16>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut format_versions = BTreeMap::new();
        format_versions.insert("awpb".to_string(), awp_core::checkpoint::FORMAT_VERSION);
        format_versions.insert("awpd".to_string(), awp_core::data::DATASET_FORMAT_VERSION);
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            resolved: BTreeMap::new(),
            sources: BTreeMap::new(),
            seeds: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            output_digests: BTreeMap::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
            format_versions,
            started_at: now_rfc3339(),
            finished_at: String::new(),
        }
    }

    pub fn digest_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))?;
        self.input_digests
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Record an artifact this run produced; the digest doubles as the
    /// reproducibility witness (same flags + seeds must yield same hash).
    pub fn add_output(&mut self, run_dir: &Path, path: &Path) -> CliResult<()> {
        let rel = path
            .strip_prefix(run_dir)
            .unwrap_or(path)
            .display()
            .to_string();
        let bytes = fs::read(path)
            .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))?;
        self.output_digests.insert(rel.clone(), sha256_hex(&bytes));
        self.outputs.push(rel);
        Ok(())
    }

    pub fn write_atomic(&mut self, run_dir: &Path) -> CliResult<()> {
        self.finished_at = now_rfc3339();
        let final_path = run_dir.join("manifest.json");
        let tmp_path = run_dir.join("manifest.json.tmp");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Usage(format!("manifest serialization: {e}")))?;
        {
            let mut f = fs::File::create(&tmp_path)?;
            f.write_all(json.as_bytes())?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp_path, &final_path)?;
        Ok(())
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// runs/<timestamp>-<tag>/, with a numeric suffix if two runs share a
/// second.
pub fn create_run_dir(root: &Path, tag: &str) -> CliResult<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let mut dir = root.join(format!("{stamp}-{tag}"));
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = root.join(format!("{stamp}-{tag}-{n}"));
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}
