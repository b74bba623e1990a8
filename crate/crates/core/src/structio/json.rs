use serde::{Deserialize, Serialize};

use super::{Bond, ComplexRecord, LigandAtom, Residue};
use crate::error::{Error, Result};
use crate::geom::Vec3;

pub const SCHEMA: &str = "curvebind-complex/1";

#[derive(Serialize, Deserialize)]
struct Document {
    schema: String,
    id: String,
    residues: Vec<DocResidue>,
    ligand: DocLigand,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conformer: Option<Vec<Vec3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_key: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DocResidue {
    residue_type: String,
    ca: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chain: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DocLigand {
    atoms: Vec<DocAtom>,
    #[serde(default)]
    bonds: Vec<Bond>,
}

#[derive(Serialize, Deserialize)]
struct DocAtom {
    element: String,
    #[serde(default)]
    formal_charge: i32,
    #[serde(default)]
    aromatic: bool,
    #[serde(default)]
    in_ring: bool,
    #[serde(default)]
    h_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chirality: Option<super::Chirality>,
    xyz: Option<Vec3>,
}

pub(super) fn parse(text: &str) -> Result<ComplexRecord> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if doc.schema != SCHEMA {
        return Err(Error::Parse {
            location: "field `schema`".into(),
            message: format!("unsupported schema `{}`, expected `{SCHEMA}`", doc.schema),
        });
    }
    let mut residues = Vec::with_capacity(doc.residues.len());
    for (k, r) in doc.residues.into_iter().enumerate() {
        let ca = r
            .ca
            .ok_or_else(|| Error::Validation(format!("{}: residue {k} is missing its Cα coordinates", doc.id)))?;
        residues.push(Residue {
            residue_type: r.residue_type,
            ca,
            chain: r.chain,
        });
    }
    let mut ligand_atoms = Vec::with_capacity(doc.ligand.atoms.len());
    for (k, a) in doc.ligand.atoms.into_iter().enumerate() {
        let xyz = a
            .xyz
            .ok_or_else(|| Error::Validation(format!("{}: ligand atom {k} is missing coordinates", doc.id)))?;
        ligand_atoms.push(LigandAtom {
            element: a.element,
            formal_charge: a.formal_charge,
            aromatic: a.aromatic,
            in_ring: a.in_ring,
            h_count: a.h_count,
            chirality: a.chirality,
            xyz,
        });
    }
    Ok(ComplexRecord {
        id: doc.id,
        residues,
        ligand_atoms,
        ligand_bonds: doc.ligand.bonds,
        conformer: doc.conformer,
        embedding_key: doc.embedding_key,
    })
}

pub fn to_json_string(record: &ComplexRecord) -> String {
    let doc = Document {
        schema: SCHEMA.to_string(),
        id: record.id.clone(),
        residues: record
            .residues
            .iter()
            .map(|r| DocResidue {
                residue_type: r.residue_type.clone(),
                ca: Some(r.ca),
                chain: r.chain.clone(),
            })
            .collect(),
        ligand: DocLigand {
            atoms: record
                .ligand_atoms
                .iter()
                .map(|a| DocAtom {
                    element: a.element.clone(),
                    formal_charge: a.formal_charge,
                    aromatic: a.aromatic,
                    in_ring: a.in_ring,
                    h_count: a.h_count,
                    chirality: a.chirality,
                    xyz: Some(a.xyz),
                })
                .collect(),
            bonds: record.ligand_bonds.clone(),
        },
        conformer: record.conformer.clone(),
        embedding_key: record.embedding_key.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("complex document serializes")
}
