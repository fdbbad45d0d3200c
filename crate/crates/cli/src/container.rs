//! On-disk matrices: a small binary container plus a JSON sidecar.
//!
//! Layout: magic `RMK1`, version `u32`, rows `u64`, cols `u64`, then the
//! entries column-major as little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"RMK1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "Q")]
    Q,
    #[serde(rename = "U")]
    U,
    #[serde(rename = "Y")]
    Y,
    #[serde(rename = "rom_block")]
    RomBlock,
    #[serde(rename = "traj")]
    Traj,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dt: f64,
    pub episode_id: String,
    pub kind: Kind,
    pub created: String,
    pub config_hash: String,
    /// Whether snapshots were shifted by the episode-initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centered: Option<bool>,
}

pub fn encode(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[0..4] != MAGIC {
        return Err("bad magic, expected RMK1".into());
    }
    let word = |range: std::ops::Range<usize>| -> [u8; 8] { bytes[range].try_into().unwrap() };
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rows = u64::from_le_bytes(word(8..16)) as usize;
    let cols = u64::from_le_bytes(word(16..24)) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or("matrix size overflows")?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(format!(
            "payload is {} bytes, expected {expected} for {rows}x{cols}",
            payload.len()
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, encode(m)).map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|msg| CliError::format(path, msg))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes the matrix and its sidecar next to it.
pub fn write_container(path: &Path, m: &DMatrix<f64>, sidecar: &Sidecar) -> Result<()> {
    write_matrix(path, m)?;
    write_json(&sidecar_path(path), sidecar)
}

/// Reads a matrix and, when present, its sidecar.
pub fn read_container(path: &Path) -> Result<(DMatrix<f64>, Option<Sidecar>)> {
    let m = read_matrix(path)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Some(read_json(&side)?)
    } else {
        None
    };
    Ok((m, sidecar))
}

/// External snapshot data: a header row of snapshot indices `0..K`, then one
/// row per component.
pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::format(path, e.to_string()))?
        .clone();
    for (j, field) in header.iter().enumerate() {
        if field.parse::<usize>().ok() != Some(j) {
            return Err(CliError::format(
                path,
                format!("header column {j} is '{field}', expected snapshot index {j}"),
            ));
        }
    }
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::format(path, e.to_string()))?;
        if record.len() != cols {
            return Err(CliError::format(
                path,
                format!("row {} has {} fields, expected {cols}", line + 1, record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::format(path, format!("row {}: '{field}' is not a number", line + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Creation time, RFC 3339 in UTC. Honours `SOURCE_DATE_EPOCH` so that
/// sidecars can be made reproducible too.
pub fn created_stamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok());
    let time = match secs.and_then(|s| chrono::DateTime::from_timestamp(s, 0)) {
        Some(t) => t,
        None => chrono::Utc::now(),
    };
    time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
