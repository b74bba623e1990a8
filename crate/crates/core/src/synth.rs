//! Seeded synthetic complexes for tests, benchmarks and demos.
//!
//! Micro complexes place the pocket residues and the distant residues in
//! antipodal pairs about the ligand centroid, so the labelled pocket center
//! coincides with the ligand centroid. Pocket residues are hydrophobic and
//! distant ones polar, so residue type alone separates the classes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::geom::{self, RigidMotion, Vec3};
use crate::structio::{Bond, BondOrder, ComplexRecord, LigandAtom, Residue};

pub const HYDROPHOBIC: [&str; 6] = ["LEU", "ILE", "PHE", "VAL", "TRP", "MET"];
pub const POLAR: [&str; 8] = ["SER", "THR", "ASN", "GLN", "LYS", "GLU", "ASP", "ARG"];

const BOND: f64 = 1.5;

#[derive(Debug, Clone, Copy)]
pub struct MicroSpec {
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// Pocket residue pairs.
    pub pocket_pairs: (usize, usize),
    /// Distant residue pairs.
    pub far_pairs: (usize, usize),
    /// Largest distance of a ligand atom from the ligand centroid.
    pub max_extent: f64,
    /// Rotation of the input conformer relative to the reference, degrees.
    pub conformer_angle: f64,
    pub conformer_jitter: f64,
}

impl Default for MicroSpec {
    fn default() -> Self {
        Self {
            min_atoms: 5,
            max_atoms: 10,
            pocket_pairs: (4, 7),
            far_pairs: (3, 6),
            max_extent: 3.5,
            conformer_angle: 10.0,
            conformer_jitter: 0.05,
        }
    }
}

fn unit<R: Rng>(rng: &mut R) -> Vec3 {
    UnitSphere.sample(rng)
}

fn clashes(points: &[Vec3], p: Vec3, skip_last: bool, min: f64) -> bool {
    let n = points.len() - skip_last as usize;
    points[..n].iter().any(|q| geom::dist(*q, p) < min)
}

/// Self-avoiding walk with fixed step, optionally confined to a ball.
fn walk<R: Rng>(rng: &mut R, n: usize, step: f64, min_sep: f64, ball: Option<(Vec3, f64)>) -> Vec<Vec3> {
    'restart: loop {
        let mut pts = vec![ball.map_or([0.0; 3], |(c, _)| c)];
        while pts.len() < n {
            let last = *pts.last().unwrap();
            let mut placed = false;
            for _ in 0..200 {
                let p = geom::add(last, geom::scale(unit(rng), step));
                if let Some((c, r)) = ball {
                    if geom::dist(p, c) > r {
                        continue;
                    }
                }
                if !clashes(&pts, p, true, min_sep) {
                    pts.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return pts;
    }
}

fn ring(size: usize) -> Vec<Vec3> {
    let r = BOND / (2.0 * (std::f64::consts::PI / size as f64).sin());
    (0..size)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / size as f64;
            [r * a.cos(), r * a.sin(), 0.0]
        })
        .collect()
}

fn ligand_atoms<R: Rng>(rng: &mut R, coords: &[Vec3], bonds: &[Bond], ring_atoms: usize) -> Vec<LigandAtom> {
    let mut degree = vec![0u32; coords.len()];
    for b in bonds {
        degree[b.i] += 1;
        degree[b.j] += 1;
    }
    coords
        .iter()
        .enumerate()
        .map(|(i, &xyz)| {
            let in_ring = i < ring_atoms;
            let aromatic = ring_atoms == 6 && in_ring;
            let element = if aromatic || degree[i] > 2 {
                "C"
            } else {
                *["C", "C", "C", "N", "O"].choose(rng).unwrap()
            };
            let valence = match element {
                "N" => 3,
                "O" => 2,
                _ => 4,
            } - aromatic as u32;
            LigandAtom {
                element: element.to_string(),
                formal_charge: 0,
                aromatic,
                in_ring,
                h_count: valence.saturating_sub(degree[i]),
                chirality: None,
                xyz,
            }
        })
        .collect()
}

/// Compact ligand centred at the origin: an optional 5/6-ring with a chain
/// tail, or a plain chain.
fn compact_ligand<R: Rng>(rng: &mut R, n: usize, max_extent: f64) -> (Vec<Vec3>, Vec<Bond>, usize) {
    loop {
        let ring_atoms = if n >= 6 && rng.gen_bool(0.5) {
            *[5usize, 6].choose(rng).unwrap()
        } else {
            0
        };
        let mut pts = if ring_atoms > 0 {
            ring(ring_atoms)
        } else {
            vec![[0.0; 3]]
        };
        let mut bonds: Vec<Bond> = (0..ring_atoms)
            .map(|k| Bond {
                i: k,
                j: (k + 1) % ring_atoms,
                order: if ring_atoms == 6 {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                },
            })
            .collect();
        let mut ok = true;
        while pts.len() < n {
            let last = pts.len() - 1;
            let mut placed = false;
            for _ in 0..200 {
                let p = geom::add(pts[last], geom::scale(unit(rng), BOND));
                let others_ok = pts
                    .iter()
                    .enumerate()
                    .all(|(k, q)| k == last || geom::dist(*q, p) >= 2.2);
                if others_ok {
                    pts.push(p);
                    bonds.push(Bond {
                        i: last,
                        j: pts.len() - 1,
                        order: BondOrder::Single,
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let c = geom::centroid(&pts);
        let pts: Vec<Vec3> = pts.iter().map(|p| geom::sub(*p, c)).collect();
        if pts.iter().all(|p| geom::norm(*p) <= max_extent) {
            return (pts, bonds, ring_atoms);
        }
    }
}

/// Fibonacci-sphere directions on the upper half; their antipodes complete
/// the shell.
fn half_shell(k: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / k as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            [r * a.cos(), r * a.sin(), z]
        })
        .collect()
}

fn small_rotation<R: Rng>(rng: &mut R, degrees: f64) -> [[f64; 3]; 3] {
    let axis = unit(rng);
    let theta = degrees.to_radians() * rng.gen_range(0.5..1.0);
    let (s, c) = theta.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn rotate(m: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
    [geom::dot(m[0], p), geom::dot(m[1], p), geom::dot(m[2], p)]
}

/// One micro complex, with every coordinate finally moved by a random rigid
/// motion.
pub fn micro_complex<R: Rng>(rng: &mut R, id: &str, spec: &MicroSpec) -> ComplexRecord {
    let n = rng.gen_range(spec.min_atoms..=spec.max_atoms);
    let (lig, bonds, ring_atoms) = compact_ligand(rng, n, spec.max_extent);
    let mut residues = Vec::new();
    let shells = [
        (spec.pocket_pairs, 6.0..7.0, &HYDROPHOBIC[..]),
        (spec.far_pairs, 14.0..18.0, &POLAR[..]),
    ];
    for ((lo, hi), radii, types) in shells {
        let k = rng.gen_range(lo..=hi);
        let spin = RigidMotion::random(rng, false, 0.0);
        for d in half_shell(k) {
            let d = spin.apply(d);
            let r = rng.gen_range(radii.clone());
            let ty = *types.choose(rng).unwrap();
            for s in [1.0, -1.0] {
                residues.push(Residue {
                    residue_type: ty.to_string(),
                    ca: geom::scale(d, s * r),
                    chain: None,
                });
            }
        }
    }
    let rot = small_rotation(rng, spec.conformer_angle);
    let offset = geom::scale(unit(rng), rng.gen_range(10.0..20.0));
    let conformer: Vec<Vec3> = lig
        .iter()
        .map(|p| {
            let jitter = geom::scale(unit(rng), spec.conformer_jitter);
            geom::add(geom::add(rotate(&rot, *p), jitter), offset)
        })
        .collect();
    let motion = RigidMotion::random(rng, false, 25.0);
    let atoms = ligand_atoms(rng, &lig, &bonds, ring_atoms);
    let mut record = ComplexRecord {
        id: id.to_string(),
        residues,
        ligand_atoms: atoms,
        ligand_bonds: bonds,
        conformer: Some(conformer),
        embedding_key: None,
    };
    transform_record(&mut record, &motion);
    record
}

pub fn micro_set<R: Rng>(rng: &mut R, n: usize, spec: &MicroSpec) -> Vec<ComplexRecord> {
    (0..n)
        .map(|k| micro_complex(rng, &format!("micro{k:03}"), spec))
        .collect()
}

/// Apply a rigid motion to residues, ligand atoms and the conformer.
pub fn transform_record(record: &mut ComplexRecord, m: &RigidMotion) {
    for r in &mut record.residues {
        r.ca = m.apply(r.ca);
    }
    for a in &mut record.ligand_atoms {
        a.xyz = m.apply(a.xyz);
    }
    if let Some(c) = &mut record.conformer {
        for p in c {
            *p = m.apply(*p);
        }
    }
}

/// A protein of `n_res` residues as a compact 3.8 Å self-avoiding chain
/// around a cavity holding an `n_atoms` ligand.
pub fn large_complex<R: Rng>(rng: &mut R, id: &str, n_res: usize, n_atoms: usize) -> ComplexRecord {
    let lig = walk(rng, n_atoms, BOND, 1.4, Some(([0.0; 3], 5.5)));
    let bonds: Vec<Bond> = (1..n_atoms)
        .map(|k| Bond {
            i: k - 1,
            j: k,
            order: BondOrder::Single,
        })
        .collect();
    let atoms = ligand_atoms(rng, &lig, &bonds, 0);
    let radius = 3.0 * (n_res as f64).cbrt() + 9.0;
    let cavity = 8.0;
    let ca = loop {
        let start = geom::scale(unit(rng), cavity + 1.0);
        let mut pts = vec![start];
        let mut stuck = false;
        while pts.len() < n_res {
            let last = *pts.last().unwrap();
            let next = (0..200).find_map(|_| {
                let p = geom::add(last, geom::scale(unit(rng), 3.8));
                (geom::norm(p) >= cavity && geom::norm(p) <= radius && !clashes(&pts, p, true, 3.8)).then_some(p)
            });
            match next {
                Some(p) => pts.push(p),
                None => {
                    stuck = true;
                    break;
                }
            }
        }
        if !stuck {
            break pts;
        }
    };
    let residues = ca
        .into_iter()
        .map(|p| Residue {
            residue_type: (*HYDROPHOBIC.iter().chain(&POLAR).collect::<Vec<_>>().choose(rng).unwrap()).to_string(),
            ca: p,
            chain: None,
        })
        .collect();
    let conformer = lig.iter().map(|p| geom::add(*p, [12.0, -3.0, 7.0])).collect();
    ComplexRecord {
        id: id.to_string(),
        residues,
        ligand_atoms: atoms,
        ligand_bonds: bonds,
        conformer: Some(conformer),
        embedding_key: None,
    }
}

/// A linear ligand of `n_atoms` along -x from the origin with exactly
/// `contacts` residues at 9.9 Å from atom 0 and every other residue-atom
/// pair at least 10 Å apart.
pub fn threshold_complex(id: &str, contacts: usize, n_atoms: usize) -> ComplexRecord {
    let atoms: Vec<Vec3> = (0..n_atoms).map(|i| [-BOND * i as f64, 0.0, 0.0]).collect();
    let bonds: Vec<Bond> = (1..n_atoms)
        .map(|k| Bond {
            i: k - 1,
            j: k,
            order: BondOrder::Single,
        })
        .collect();
    let mut residues: Vec<Residue> = half_shell(contacts.max(1))
        .into_iter()
        .take(contacts)
        .map(|d| Residue {
            residue_type: "LEU".into(),
            // Rotate the shell so every direction has a positive x component.
            ca: geom::scale([d[2], d[0], d[1]], 9.9),
            chain: None,
        })
        .collect();
    for k in 0..4 {
        residues.push(Residue {
            residue_type: "SER".into(),
            ca: [30.0 + 3.8 * k as f64, 0.0, 0.0],
            chain: None,
        });
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    ComplexRecord {
        id: id.to_string(),
        residues,
        ligand_atoms: ligand_atoms(&mut rng, &atoms, &bonds, 0),
        ligand_bonds: bonds,
        conformer: None,
        embedding_key: None,
    }
}
