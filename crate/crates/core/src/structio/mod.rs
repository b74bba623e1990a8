//! Complex documents: parsing, validation, dataset filtering and residue
//! embedding tables.

mod embedding;
mod filter;
mod json;
mod pdb;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

pub use embedding::{EmbeddingTable, EMBEDDING_MAGIC};
pub use filter::{apply_filters, count_contacts, prune_chains, FilterDecision, FilterPolicy};
pub use json::{to_json_string, SCHEMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    pub residue_type: String,
    pub ca: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LigandAtom {
    pub element: String,
    #[serde(default)]
    pub formal_charge: i32,
    #[serde(default)]
    pub aromatic: bool,
    #[serde(default)]
    pub in_ring: bool,
    #[serde(default)]
    pub h_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chirality: Option<Chirality>,
    pub xyz: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chirality {
    Cw,
    Ccw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    #[serde(rename = "1")]
    Single,
    #[serde(rename = "2")]
    Double,
    #[serde(rename = "3")]
    Triple,
    #[serde(rename = "aromatic")]
    Aromatic,
}

impl BondOrder {
    /// Contribution to explicit valence (aromatic counts 1.5).
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

/// One protein-ligand complex.
///
/// `ligand_atoms[*].xyz` is the reference (crystal) geometry used for labels,
/// losses and metrics. `conformer`, when present, is the docking input; it is
/// only ever translated, never read for ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexRecord {
    pub id: String,
    pub residues: Vec<Residue>,
    pub ligand_atoms: Vec<LigandAtom>,
    pub ligand_bonds: Vec<Bond>,
    pub conformer: Option<Vec<Vec3>>,
    pub embedding_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentFormat {
    JsonComplex,
    PdbLigand,
}

impl DocumentFormat {
    /// Guess from a file extension: `.pdb`/`.ent` are PDB, everything else JSON.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pdb") | Some("ent") => DocumentFormat::PdbLigand,
            _ => DocumentFormat::JsonComplex,
        }
    }
}

impl ComplexRecord {
    pub fn n_atoms(&self) -> usize {
        self.ligand_atoms.len()
    }

    pub fn n_residues(&self) -> usize {
        self.residues.len()
    }

    pub fn ligand_coords(&self) -> Vec<Vec3> {
        self.ligand_atoms.iter().map(|a| a.xyz).collect()
    }

    pub fn ca_coords(&self) -> Vec<Vec3> {
        self.residues.iter().map(|r| r.ca).collect()
    }

    /// Docking input geometry: the conformer when given, otherwise the
    /// ligand coordinates of the document.
    pub fn input_conformer(&self) -> Vec<Vec3> {
        match &self.conformer {
            Some(c) => c.clone(),
            None => self.ligand_coords(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ligand_atoms.is_empty() {
            return Err(Error::Validation(format!("{}: ligand has no atoms", self.id)));
        }
        if self.residues.is_empty() {
            return Err(Error::Validation(format!("{}: protein has no residues", self.id)));
        }
        for (k, r) in self.residues.iter().enumerate() {
            if !geom::is_finite(r.ca) {
                return Err(Error::Validation(format!("{}: residue {k} has non-finite Cα", self.id)));
            }
        }
        for (k, a) in self.ligand_atoms.iter().enumerate() {
            if !geom::is_finite(a.xyz) {
                return Err(Error::Validation(format!("{}: atom {k} has non-finite coordinates", self.id)));
            }
        }
        let n = self.ligand_atoms.len();
        let mut seen = HashSet::new();
        for b in &self.ligand_bonds {
            if b.i >= n || b.j >= n {
                return Err(Error::Validation(format!(
                    "{}: bond ({}, {}) out of range for {n} atoms",
                    self.id, b.i, b.j
                )));
            }
            if b.i == b.j {
                return Err(Error::Validation(format!("{}: self-loop bond on atom {}", self.id, b.i)));
            }
            if !seen.insert((b.i.min(b.j), b.i.max(b.j))) {
                return Err(Error::Validation(format!(
                    "{}: duplicate bond ({}, {})",
                    self.id, b.i, b.j
                )));
            }
        }
        if let Some(c) = &self.conformer {
            if c.len() != n {
                return Err(Error::Validation(format!(
                    "{}: conformer has {} atoms, ligand has {n}",
                    self.id,
                    c.len()
                )));
            }
            if !c.iter().all(|p| geom::is_finite(*p)) {
                return Err(Error::Validation(format!("{}: non-finite conformer coordinates", self.id)));
            }
        }
        Ok(())
    }
}

/// Parse and validate a complex document.
pub fn parse_complex(document: &[u8], format: DocumentFormat) -> Result<ComplexRecord> {
    let text = std::str::from_utf8(document).map_err(|e| Error::Parse {
        location: format!("byte {}", e.valid_up_to()),
        message: "document is not valid UTF-8".into(),
    })?;
    let record = match format {
        DocumentFormat::JsonComplex => json::parse(text)?,
        DocumentFormat::PdbLigand => pdb::parse(text)?,
    };
    record.validate()?;
    Ok(record)
}

pub fn read_complex(path: &std::path::Path) -> Result<ComplexRecord> {
    let bytes = std::fs::read(path)?;
    parse_complex(&bytes, DocumentFormat::from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "curvebind-complex/1",
        "id": "mini",
        "residues": [{"residue_type": "GLY", "ca": [0.0, 0.0, 0.0]}],
        "ligand": {"atoms": [{"element": "C", "xyz": [1.0, 0.0, 0.0]}], "bonds": []}
    }"#;

    #[test]
    fn minimal_json_record() {
        let r = parse_complex(MINIMAL.as_bytes(), DocumentFormat::JsonComplex).unwrap();
        assert_eq!(r.n_atoms(), 1);
        assert_eq!(r.n_residues(), 1);
        assert_eq!(r.id, "mini");
    }

    #[test]
    fn duplicate_bond_rejected() {
        let doc = r#"{
            "schema": "curvebind-complex/1", "id": "dup",
            "residues": [{"residue_type": "GLY", "ca": [0.0, 0.0, 0.0]}],
            "ligand": {"atoms": [
                {"element": "C", "xyz": [1.0, 0.0, 0.0]},
                {"element": "O", "xyz": [2.2, 0.0, 0.0]}],
              "bonds": [{"i": 0, "j": 1, "order": "1"}, {"i": 1, "j": 0, "order": "1"}]}
        }"#;
        let err = parse_complex(doc.as_bytes(), DocumentFormat::JsonComplex).unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("duplicate")));
    }

    #[test]
    fn self_loop_and_out_of_range_rejected() {
        let base = |bonds: &str| {
            format!(
                r#"{{"schema": "curvebind-complex/1", "id": "x",
                "residues": [{{"residue_type": "GLY", "ca": [0.0, 0.0, 0.0]}}],
                "ligand": {{"atoms": [{{"element": "C", "xyz": [1.0, 0.0, 0.0]}},
                                     {{"element": "C", "xyz": [2.0, 0.0, 0.0]}}],
                           "bonds": {bonds}}}}}"#
            )
        };
        for bonds in [r#"[{"i": 0, "j": 0, "order": "1"}]"#, r#"[{"i": 0, "j": 5, "order": "1"}]"#] {
            let doc = base(bonds);
            assert!(matches!(
                parse_complex(doc.as_bytes(), DocumentFormat::JsonComplex),
                Err(Error::Validation(_))
            ));
        }
    }

    #[test]
    fn missing_coordinates_is_an_error() {
        let doc = r#"{"schema": "curvebind-complex/1", "id": "x",
            "residues": [{"residue_type": "GLY"}],
            "ligand": {"atoms": [{"element": "C", "xyz": [1.0, 0.0, 0.0]}], "bonds": []}}"#;
        let err = parse_complex(doc.as_bytes(), DocumentFormat::JsonComplex).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("Cα")), "{err}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let doc = "{\n  \"schema\": \"curvebind-complex/1\",\n  \"id\": 3,\n}";
        match parse_complex(doc.as_bytes(), DocumentFormat::JsonComplex) {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("line 3"), "{location}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
