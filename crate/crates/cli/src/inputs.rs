use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use curvebind::structio::{read_complex, ComplexRecord, FilterPolicy};
use serde::{Deserialize, Serialize};

pub const INDEX_SCHEMA: &str = "curvebind-index/1";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptEntry {
    pub id: String,
    /// Normalized document, relative to the index file.
    pub path: String,
    pub source: String,
    pub n_atoms: usize,
    pub n_residues: usize,
    pub contacts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEntry {
    pub id: String,
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub source: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub schema: String,
    pub policy: FilterPolicy,
    pub kept: Vec<KeptEntry>,
    pub dropped: Vec<DroppedEntry>,
    pub errors: Vec<ErrorEntry>,
}

fn is_document(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()),
        Some("json") | Some("pdb") | Some("ent")
    ) && p.file_name().and_then(|n| n.to_str()) != Some("manifest.json")
}

/// Complex documents in `dir`, sorted by name. Not recursive.
pub fn list_documents(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() && is_document(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read_index(path: &Path) -> Result<Index> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let index: Index = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    if index.schema != INDEX_SCHEMA {
        bail!(curvebind::Error::Format(format!(
            "{}: unsupported index schema `{}`",
            path.display(),
            index.schema
        )));
    }
    Ok(index)
}

fn looks_like_index(path: &Path) -> bool {
    path.file_name().and_then(|n| n.to_str()) == Some(INDEX_FILE)
}

/// Resolve inputs to complex records. Each path may be a document, a
/// directory of documents, a directory holding an ingest index, or the
/// index file itself. Any unreadable document is an error.
pub fn load_records(paths: &[PathBuf]) -> Result<Vec<(PathBuf, ComplexRecord)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let idx = p.join(INDEX_FILE);
            if idx.is_file() {
                files.push(idx);
            } else {
                files.extend(list_documents(p)?);
            }
        } else {
            files.push(p.clone());
        }
    }
    let mut out = Vec::new();
    for f in files {
        if looks_like_index(&f) {
            let index = read_index(&f)?;
            let base = f.parent().unwrap_or(Path::new("."));
            for k in index.kept {
                let doc = base.join(&k.path);
                let rec = read_complex(&doc).with_context(|| format!("reading {}", doc.display()))?;
                out.push((doc, rec));
            }
        } else {
            let rec = read_complex(&f).with_context(|| format!("reading {}", f.display()))?;
            out.push((f, rec));
        }
    }
    let mut seen = BTreeSet::new();
    for (p, r) in &out {
        if !seen.insert(r.id.clone()) {
            bail!(curvebind::Error::Validation(format!(
                "duplicate complex id `{}` ({})",
                r.id,
                p.display()
            )));
        }
    }
    Ok(out)
}

/// File-name-safe form of a complex id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}
