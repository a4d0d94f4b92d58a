//! Output artifacts: CSV tables, JSON reports and raw binary dumps.
//!
//! CSV floats are written with 17 significant digits so that every value
//! parses back to the same `f64`. Binary dumps are little-endian `f64`,
//! row-major, with a JSON sidecar describing the shape.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[S], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    let names: Vec<&str> = header.iter().map(|h| h.as_ref()).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "row of length {} under a header of {}",
                row.len(),
                header.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad number {c:?}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Shape description stored next to a binary dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dtype: String,
    pub endianness: String,
    pub order: String,
    pub shape: Vec<usize>,
    /// Column names when the last axis indexes named quantities.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes `data` to `path` and the sidecar to `path.json`.
pub fn write_binary(
    path: &Path,
    shape: &[usize],
    columns: &[String],
    meta: serde_json::Value,
    data: &[f64],
) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} holds {n} values, got {}",
            data.len()
        )));
    }
    let mut f = fs::File::create(path)?;
    let mut buf = Vec::with_capacity(8 * data.len());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    write_json(
        &sidecar_path(path),
        &Sidecar {
            dtype: "f64".into(),
            endianness: "little".into(),
            order: "row-major".into(),
            shape: shape.to_vec(),
            columns: columns.to_vec(),
            meta,
        },
    )
}

pub fn read_binary(path: &Path) -> Result<(Sidecar, Vec<f64>)> {
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != 8 * side.shape.iter().product::<usize>() {
        return Err(Error::InvalidArgument(format!(
            "{} does not match its sidecar shape {:?}",
            path.display(),
            side.shape
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((side, data))
}
