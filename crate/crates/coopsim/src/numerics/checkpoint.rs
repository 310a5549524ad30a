//! Weight checkpoints: a JSON manifest (`<stem>.json`) listing parameter
//! names, shapes, and byte offsets, plus one raw little-endian f32 buffer
//! (`<stem>.bin`). Round-trips are bit-exact.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the raw buffer.
    offset: u64,
    /// Element count (f32s).
    len: u64,
}

const FORMAT: &str = "coopsim-checkpoint-v1";

fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn buffer_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

/// Write `<stem>.json` and `<stem>.bin` for the named parameters, in order.
pub fn save_checkpoint(stem: &Path, params: &[(String, Tensor)]) -> io::Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut raw: Vec<u8> = Vec::new();
    for (name, tensor) in params {
        let data = tensor.data();
        entries.push(ParamEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset: raw.len() as u64,
            len: data.len() as u64,
        });
        for v in data.iter() {
            raw.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest { format: FORMAT.to_string(), params: entries };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::File::create(manifest_path(stem))?.write_all(json.as_bytes())?;
    fs::File::create(buffer_path(stem))?.write_all(&raw)?;
    Ok(())
}

/// One parameter as loaded from disk.
pub struct LoadedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Read a checkpoint written by [`save_checkpoint`], preserving order.
pub fn load_checkpoint(stem: &Path) -> io::Result<Vec<LoadedParam>> {
    let json = fs::read_to_string(manifest_path(stem))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    if manifest.format != FORMAT {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unknown checkpoint format '{}'", manifest.format),
        ));
    }
    let raw = fs::read(buffer_path(stem))?;
    let mut out = Vec::with_capacity(manifest.params.len());
    for entry in manifest.params {
        let start = entry.offset as usize;
        let end = start + entry.len as usize * 4;
        if end > raw.len() {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("parameter '{}' extends past buffer end", entry.name),
            ));
        }
        let numel: usize = entry.shape.iter().product();
        if numel != entry.len as usize {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("parameter '{}' shape/len mismatch", entry.name),
            ));
        }
        let data: Vec<f32> = raw[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(LoadedParam { name: entry.name, shape: entry.shape, data });
    }
    Ok(out)
}
