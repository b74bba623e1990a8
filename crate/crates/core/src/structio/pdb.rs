//! Minimal PDB reader: `ATOM ... CA` records become residues, `HETATM`
//! records (waters and monatomic ions excluded) become ligand atoms, and
//! `CONECT` records between ligand atoms become bonds. A bond listed `k`
//! times from the same atom has order `k`. Only the first model is read.

use std::collections::{BTreeMap, HashMap};

use super::{Bond, BondOrder, ComplexRecord, LigandAtom, Residue};
use crate::error::{Error, Result};
use crate::geom::Vec3;

const EXCLUDED_HET: &[&str] = &[
    "HOH", "WAT", "DOD", "NA", "K", "CL", "MG", "CA", "ZN", "MN", "FE", "CU", "CO", "NI", "CD", "BR",
    "IOD", "SO4", "PO4",
];

fn field(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        return "";
    }
    line.get(start..end).unwrap_or("").trim()
}

fn parse_f64(line: &str, lineno: usize, start: usize, end: usize, name: &str) -> Result<f64> {
    let s = field(line, start, end);
    s.parse::<f64>().map_err(|_| Error::Parse {
        location: format!("line {lineno} field {name}"),
        message: format!("cannot parse `{s}` as a number"),
    })
}

fn parse_xyz(line: &str, lineno: usize) -> Result<Vec3> {
    Ok([
        parse_f64(line, lineno, 30, 38, "x")?,
        parse_f64(line, lineno, 38, 46, "y")?,
        parse_f64(line, lineno, 46, 54, "z")?,
    ])
}

fn parse_charge(s: &str) -> i32 {
    // "2-", "1+", "+", "-"
    let s = s.trim();
    if s.is_empty() {
        return 0;
    }
    let (digits, sign) = s.split_at(s.len() - 1);
    let mag = if digits.is_empty() { 1 } else { digits.parse().unwrap_or(0) };
    match sign {
        "-" => -mag,
        "+" => mag,
        _ => 0,
    }
}

pub(super) fn parse(text: &str) -> Result<ComplexRecord> {
    let mut id = String::from("pdb");
    let mut residues = Vec::new();
    let mut atoms: Vec<LigandAtom> = Vec::new();
    let mut serial_to_atom: HashMap<i64, usize> = HashMap::new();
    let mut conect: Vec<(usize, i64, i64)> = Vec::new();

    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let rec = field(line, 0, 6);
        match rec {
            "HEADER" => {
                let code = field(line, 62, 66);
                if !code.is_empty() {
                    id = code.to_string();
                }
            }
            "ENDMDL" => break,
            "ATOM" => {
                if field(line, 12, 16) != "CA" {
                    continue;
                }
                let alt = field(line, 16, 17);
                if !(alt.is_empty() || alt == "A") {
                    continue;
                }
                let chain = field(line, 21, 22);
                residues.push(Residue {
                    residue_type: field(line, 17, 20).to_string(),
                    ca: parse_xyz(line, lineno)?,
                    chain: (!chain.is_empty()).then(|| chain.to_string()),
                });
            }
            "HETATM" => {
                let resname = field(line, 17, 20);
                if EXCLUDED_HET.contains(&resname) {
                    continue;
                }
                let alt = field(line, 16, 17);
                if !(alt.is_empty() || alt == "A") {
                    continue;
                }
                let serial: i64 = field(line, 6, 11).parse().map_err(|_| Error::Parse {
                    location: format!("line {lineno} field serial"),
                    message: "bad atom serial".into(),
                })?;
                let mut element = field(line, 76, 78).to_string();
                if element.is_empty() {
                    // fall back to the leading letters of the atom name
                    element = field(line, 12, 16)
                        .chars()
                        .take_while(|c| c.is_ascii_alphabetic())
                        .take(1)
                        .collect();
                }
                if element.is_empty() {
                    return Err(Error::Parse {
                        location: format!("line {lineno} field element"),
                        message: "missing element symbol".into(),
                    });
                }
                serial_to_atom.insert(serial, atoms.len());
                atoms.push(LigandAtom {
                    element,
                    formal_charge: parse_charge(field(line, 78, 80)),
                    aromatic: false,
                    in_ring: false,
                    h_count: 0,
                    chirality: None,
                    xyz: parse_xyz(line, lineno)?,
                });
            }
            "CONECT" => {
                let from: i64 = match field(line, 6, 11).parse() {
                    Ok(v) => v,
                    Err(_) => {
                        return Err(Error::Parse {
                            location: format!("line {lineno} field CONECT serial"),
                            message: "bad serial".into(),
                        })
                    }
                };
                for f in 0..4 {
                    let s = field(line, 11 + 5 * f, 16 + 5 * f);
                    if s.is_empty() {
                        continue;
                    }
                    let to: i64 = s.parse().map_err(|_| Error::Parse {
                        location: format!("line {lineno} field CONECT partner {}", f + 1),
                        message: format!("bad serial `{s}`"),
                    })?;
                    conect.push((lineno, from, to));
                }
            }
            _ => {}
        }
    }

    // directed multiplicities between ligand atoms
    let mut counts: BTreeMap<(usize, usize), (u32, u32)> = BTreeMap::new();
    for (_, from, to) in conect {
        let (Some(&a), Some(&b)) = (serial_to_atom.get(&from), serial_to_atom.get(&to)) else {
            continue;
        };
        if a == b {
            continue;
        }
        let e = counts.entry((a.min(b), a.max(b))).or_default();
        if a < b {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let mut bonds = Vec::with_capacity(counts.len());
    for ((i, j), (f, r)) in counts {
        let order = match f.max(r) {
            1 => BondOrder::Single,
            2 => BondOrder::Double,
            _ => BondOrder::Triple,
        };
        bonds.push(Bond { i, j, order });
    }

    let n = atoms.len();
    let mut adj = vec![Vec::new(); n];
    for b in &bonds {
        adj[b.i].push(b.j);
        adj[b.j].push(b.i);
    }
    for (a, nb) in adj.iter().enumerate() {
        atoms[a].h_count = nb.iter().filter(|&&x| atoms[x].element.eq_ignore_ascii_case("H")).count() as u32;
    }
    for a in ring_atoms(n, &bonds) {
        atoms[a].in_ring = true;
    }

    Ok(ComplexRecord {
        id,
        residues,
        ligand_atoms: atoms,
        ligand_bonds: bonds,
        conformer: None,
        embedding_key: None,
    })
}

/// Atoms incident to a non-bridge edge (an edge on some cycle).
fn ring_atoms(n: usize, bonds: &[Bond]) -> Vec<usize> {
    let mut out = Vec::new();
    for (k, b) in bonds.iter().enumerate() {
        // b lies on a cycle iff b.j is reachable from b.i without using b
        let mut seen = vec![false; n];
        let mut stack = vec![b.i];
        seen[b.i] = true;
        let mut found = false;
        while let Some(v) = stack.pop() {
            if v == b.j {
                found = true;
                break;
            }
            for (m, e) in bonds.iter().enumerate() {
                if m == k {
                    continue;
                }
                let w = if e.i == v {
                    e.j
                } else if e.j == v {
                    e.i
                } else {
                    continue;
                };
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if found {
            out.push(b.i);
            out.push(b.j);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}
