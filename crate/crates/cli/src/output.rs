//! Output files and the manifest that accompanies them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use batchscreen::engine::CampaignTrace;
use batchscreen::metrics::{write_metric_rows, MetricRow};

pub const VERSION: &str = concat!("batchscreen ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub spec_sha256: String,
    pub seed: u64,
    pub version: &'static str,
    pub status: String,
    pub files: Vec<String>,
}

/// Collects written files relative to an output directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn write_trace(&mut self, rel: &str, trace: &CampaignTrace) -> Result<()> {
        self.write(rel, trace.to_jsonl(true).as_bytes())
    }

    pub fn write_metrics(&mut self, rel: &str, rows: &[MetricRow]) -> Result<()> {
        let mut buf = Vec::new();
        write_metric_rows(&mut buf, rows, true)?;
        self.write(rel, &buf)
    }

    pub fn finish(mut self, command: &str, spec_bytes: &[u8], seed: u64, status: &str) -> Result<()> {
        let manifest = Manifest {
            command: command.to_string(),
            spec_sha256: sha256_hex(spec_bytes),
            seed,
            version: VERSION,
            status: status.to_string(),
            files: std::mem::take(&mut self.files),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.root.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}

/// File name for one campaign trace.
pub fn trace_name(method: &str, rep: usize) -> String {
    format!("{method}-rep{rep}.jsonl")
}
