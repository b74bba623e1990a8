use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ComplexRecord;
use crate::error::{Error, Result};
use crate::geom;

/// Dataset filtering thresholds. Defaults drop complexes with five or fewer
/// Cα-ligand contacts under 10 Å and ligands of 100 or more atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub contact_cutoff: f64,
    pub min_contacts_exclusive: usize,
    pub max_ligand_atoms_exclusive: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            contact_cutoff: 10.0,
            min_contacts_exclusive: 5,
            max_ligand_atoms_exclusive: 100,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.contact_cutoff > 0.0) || !self.contact_cutoff.is_finite() {
            return Err(Error::Validation(format!(
                "contact_cutoff must be positive, got {}",
                self.contact_cutoff
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "lowercase")]
pub enum FilterDecision {
    Keep,
    Drop(String),
}

/// Number of (residue, ligand atom) pairs strictly closer than `cutoff`.
pub fn count_contacts(record: &ComplexRecord, cutoff: f64) -> usize {
    let c2 = cutoff * cutoff;
    record
        .residues
        .iter()
        .map(|r| {
            record
                .ligand_atoms
                .iter()
                .filter(|a| geom::dist2(r.ca, a.xyz) < c2)
                .count()
        })
        .sum()
}

pub fn apply_filters(record: &ComplexRecord, policy: &FilterPolicy) -> FilterDecision {
    let contacts = count_contacts(record, policy.contact_cutoff);
    if contacts <= policy.min_contacts_exclusive {
        return FilterDecision::Drop("contacts".into());
    }
    if record.n_atoms() >= policy.max_ligand_atoms_exclusive {
        return FilterDecision::Drop("ligand_size".into());
    }
    FilterDecision::Keep
}

/// Remove every chain none of whose Cα lies strictly within `cutoff` of a
/// ligand atom. Records without chain ids are returned unchanged.
pub fn prune_chains(record: &ComplexRecord, cutoff: f64) -> ComplexRecord {
    if record.residues.iter().any(|r| r.chain.is_none()) {
        return record.clone();
    }
    let c2 = cutoff * cutoff;
    let near: BTreeSet<&str> = record
        .residues
        .iter()
        .filter(|r| record.ligand_atoms.iter().any(|a| geom::dist2(r.ca, a.xyz) < c2))
        .filter_map(|r| r.chain.as_deref())
        .collect();
    let mut out = record.clone();
    out.residues.retain(|r| r.chain.as_deref().is_some_and(|c| near.contains(c)));
    out
}
