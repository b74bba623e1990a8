//! Per-residue embedding tables (precomputed language-model outputs or the
//! fallback features). Two on-disk forms:
//!
//! * TSV: `key <TAB> residue_index <TAB> v0 <TAB> v1 ...`, one row per residue;
//! * binary: one matrix per file, a 16-byte header `b"CBEM"`, `u32` width,
//!   `u64` row count (little endian), then `rows * width` little-endian `f32`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"CBEM";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    width: Option<usize>,
    entries: BTreeMap<String, Vec<Vec<f64>>>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn width(&self) -> Option<usize> {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<()> {
        let key = key.into();
        for r in &rows {
            match self.width {
                None => self.width = Some(r.len()),
                Some(w) if w != r.len() => {
                    return Err(Error::Format(format!(
                        "embedding `{key}`: row width {} differs from table width {w}",
                        r.len()
                    )))
                }
                _ => {}
            }
        }
        self.entries.insert(key, rows);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&[Vec<f64>]> {
        self.entries
            .get(key)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }

    /// Rows for `key`, checked against the residue count of the record.
    pub fn lookup(&self, key: &str, n_residues: usize) -> Result<&[Vec<f64>]> {
        let rows = self.get(key)?;
        if rows.len() != n_residues {
            return Err(Error::Shape(format!(
                "embedding `{key}` has {} rows, record has {n_residues} residues",
                rows.len()
            )));
        }
        Ok(rows)
    }

    pub fn from_tsv(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("embedding TSV is not UTF-8".into()))?;
        let mut staged: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        let mut width: Option<usize> = None;
        for (k, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let key = parts.next().unwrap_or_default().to_string();
            let idx: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("line {}: missing residue index", k + 1)))?;
            let values = parts
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", k + 1)))?;
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(Error::Format(format!(
                        "line {}: ragged row of width {}, expected {w}",
                        k + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
            if staged.entry(key.clone()).or_default().insert(idx, values).is_some() {
                return Err(Error::Format(format!("line {}: duplicate row {key}/{idx}", k + 1)));
            }
        }
        let mut table = Self::new();
        for (key, rows) in staged {
            let n = rows.len();
            if rows.keys().copied().ne(0..n) {
                return Err(Error::Format(format!("embedding `{key}`: residue indices are not 0..{n}")));
            }
            table.insert(key, rows.into_values().collect())?;
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (key, rows) in &self.entries {
            for (i, r) in rows.iter().enumerate() {
                out.push_str(key);
                out.push('\t');
                out.push_str(&i.to_string());
                for v in r {
                    out.push('\t');
                    out.push_str(&format!("{v:.16e}"));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Read one binary matrix file and store it under `key`.
    pub fn add_binary(&mut self, key: &str, bytes: &[u8]) -> Result<()> {
        if bytes.len() < 16 || bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::Format("binary embedding: bad magic or short header".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let expected = rows
            .checked_mul(width)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("binary embedding: size overflow".into()))?;
        let body = &bytes[16..];
        if body.len() != expected {
            return Err(Error::Format(format!(
                "binary embedding: {rows}x{width} needs {expected} bytes, found {}",
                body.len()
            )));
        }
        let vals: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let matrix = vals.chunks(width.max(1)).take(rows).map(|c| c.to_vec()).collect();
        self.insert(key, matrix)
    }

    pub fn binary_bytes(rows: &[Vec<f64>]) -> Vec<u8> {
        let width = rows.first().map_or(0, |r| r.len());
        let mut out = Vec::with_capacity(16 + rows.len() * width * 4);
        out.extend_from_slice(&EMBEDDING_MAGIC);
        out.extend_from_slice(&(width as u32).to_le_bytes());
        out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
        for r in rows {
            for v in r {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }
}
