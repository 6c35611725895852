//! VBEAMv01 container.
//!
//! ```text
//! magic      8 bytes  "VBEAMv01"
//! hdr_len    u64 LE
//! header     hdr_len bytes of UTF-8 JSON
//! data       f64 LE arrays, row-major, in manifest order
//! ```
//!
//! The header is `{"format", "kind", "spec", "arrays": [{name, rows, cols,
//! offset}]}`, written compactly with the spec's keys sorted, and `offset`
//! counted in bytes from the start of `data`.
//! Arrays are contiguous; no gaps and no trailing bytes are allowed.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, Error, Result};
use crate::tensor_ops::ScoreMatrix;

pub const MAGIC: &[u8; 8] = b"VBEAMv01";
const PREFIX_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    spec: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// A decoded container. Arrays are validated against the manifest.
#[derive(Clone, Debug)]
pub struct Container {
    kind: String,
    spec: serde_json::Value,
    entries: Vec<ArrayEntry>,
    arrays: Vec<ScoreMatrix>,
    data_start: u64,
}

pub fn write_container(kind: &str, spec: serde_json::Value, arrays: &[(&str, &ScoreMatrix)]) -> Vec<u8> {
    let mut offset = 0u64;
    let entries = arrays
        .iter()
        .map(|(name, m)| {
            let e = ArrayEntry {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
                offset,
            };
            offset += (m.values().len() * 8) as u64;
            e
        })
        .collect();
    let header = Header {
        format: "VBEAMv01".into(),
        kind: kind.into(),
        spec,
        arrays: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in arrays {
        for v in m.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return format_err(0, "bad magic, not a VBEAMv01 container");
    }
    if bytes.len() < PREFIX_LEN {
        return format_err(8, "truncated header length");
    }
    let hdr_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let remaining = (bytes.len() - PREFIX_LEN) as u64;
    if hdr_len > remaining {
        return format_err(16, format!("header of {hdr_len} bytes exceeds file ({remaining} left)"));
    }
    let data_start = PREFIX_LEN as u64 + hdr_len;
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..data_start as usize])
        .or_else(|e| format_err(16 + e.column().saturating_sub(1) as u64, format!("bad header: {e}")))?;
    if header.format != "VBEAMv01" {
        return format_err(16, format!("header format {:?} is not VBEAMv01", header.format));
    }
    let data = &bytes[data_start as usize..];
    let mut expected = 0u64;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for e in &header.arrays {
        let at = data_start + e.offset;
        if e.offset != expected {
            return format_err(at, format!("array {} at offset {}, expected {expected}", e.name, e.offset));
        }
        let n = e
            .rows
            .checked_mul(e.cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format {
                offset: at,
                message: format!("array {} dimensions overflow", e.name),
            })?;
        let end = e.offset as usize + n;
        if end > data.len() {
            return format_err(
                data_start + data.len() as u64,
                format!("truncated payload: array {} needs {n} bytes", e.name),
            );
        }
        let values: Vec<f64> = data[e.offset as usize..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return format_err(at + 8 * i as u64, format!("non-finite value in array {}", e.name));
        }
        arrays.push(ScoreMatrix::new(e.rows, e.cols, values).or_else(|err| format_err(at, err.to_string()))?);
        expected = end as u64;
    }
    if expected != data.len() as u64 {
        return format_err(data_start + expected, "trailing bytes after last array");
    }
    Ok(Container {
        kind: header.kind,
        spec: header.spec,
        entries: header.arrays,
        arrays,
        data_start,
    })
}

impl Container {
    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn entries(&self) -> &[ArrayEntry] {
        &self.entries
    }

    pub fn arrays(&self) -> &[ScoreMatrix] {
        &self.arrays
    }

    pub fn into_arrays(self) -> Vec<ScoreMatrix> {
        self.arrays
    }

    /// Error located in the JSON header.
    pub fn header_error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: PREFIX_LEN as u64,
            message: message.into(),
        }
    }

    /// Error located at the first byte of an array.
    pub fn array_error(&self, entry: &ArrayEntry, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.data_start + entry.offset,
            message: message.into(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(self.header_error(format!("container holds {:?}, expected {kind:?}", self.kind)));
        }
        Ok(())
    }

    pub fn spec<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.spec.clone()).map_err(|e| self.header_error(format!("bad spec: {e}")))
    }

    /// Checks names and shapes against `(name, rows, cols)` in order.
    pub fn expect_layout(&self, layout: impl IntoIterator<Item = (String, usize, usize)>) -> Result<()> {
        let layout: Vec<_> = layout.into_iter().collect();
        if layout.len() != self.entries.len() {
            return Err(self.header_error(format!(
                "{} arrays present, expected {}",
                self.entries.len(),
                layout.len()
            )));
        }
        for (e, (name, rows, cols)) in self.entries.iter().zip(layout) {
            if e.name != name || e.rows != rows || e.cols != cols {
                return Err(self.array_error(
                    e,
                    format!(
                        "dimension mismatch: {} is {}x{}, expected {name} {rows}x{cols}",
                        e.name, e.rows, e.cols
                    ),
                ));
            }
        }
        Ok(())
    }
}
