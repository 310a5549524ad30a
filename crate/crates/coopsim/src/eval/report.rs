use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::process::Command;

use serde::Serialize;

use super::EvalRecord;

/// Results CSV with the columns (method, p, iou, ap, seed).
pub fn write_records_csv<W: Write>(mut out: W, records: &[EvalRecord]) -> io::Result<()> {
    writeln!(out, "method,p,iou,ap,seed")?;
    for r in records {
        writeln!(out, "{},{},{},{:.6},{}", r.method, r.p, r.iou, r.ap, r.seed)?;
    }
    Ok(())
}

/// Noise-sweep CSV, extended with the noise level columns.
pub fn write_noise_csv<W: Write>(mut out: W, records: &[EvalRecord]) -> io::Result<()> {
    writeln!(out, "method,p,sigma_t,sigma_r,iou,ap,seed")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{}",
            r.method, r.p, r.sigma_t, r.sigma_r, r.iou, r.ap, r.seed
        )?;
    }
    Ok(())
}

/// Metadata written next to every command's outputs.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub git_describe: String,
    pub wall_time_s: f64,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(manifest).expect("manifest serializes"))
}

/// `git describe --always --dirty`, or "unknown" outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}
