use curvebind::geom;
use curvebind::structio::{
    count_contacts, parse_complex, prune_chains, to_json_string, BondOrder, ComplexRecord, DocumentFormat,
    EmbeddingTable, Residue,
};
use curvebind::synth::{self, MicroSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pdb_line(rec: &str, serial: usize, name: &str, res: &str, chain: char, seq: usize, x: [f64; 3], el: &str) -> String {
    format!(
        "{rec:<6}{serial:>5} {name:<4} {res:>3} {chain}{seq:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {el:>2}",
        x[0], x[1], x[2], 1.0, 0.0
    )
}

/// Fixed-column PDB text for a record: one CA atom per residue, one HETATM
/// per ligand atom, bond order as CONECT multiplicity.
fn write_pdb(r: &ComplexRecord) -> String {
    let mut out = vec![format!("{:<62}{:<4}", "HEADER    TEST", r.id)];
    for (k, res) in r.residues.iter().enumerate() {
        out.push(pdb_line("ATOM", k + 1, "CA", &res.residue_type, 'A', k + 1, res.ca, "C"));
    }
    let base = r.residues.len() + 1;
    for (k, a) in r.ligand_atoms.iter().enumerate() {
        out.push(pdb_line("HETATM", base + k, &format!("{}{}", a.element, k + 1), "LIG", 'B', 901, a.xyz, &a.element));
    }
    for b in &r.ligand_bonds {
        let times = match b.order {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => panic!("aromatic bonds have no CONECT form"),
        };
        let partner = format!("{:>5}", base + b.j);
        out.push(format!("CONECT{:>5}{}", base + b.i, partner.repeat(times)));
    }
    out.push("END".into());
    out.join("\n") + "\n"
}

#[test]
fn pdb_text_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..10 {
        let mut r = synth::micro_complex(&mut rng, &format!("p{i}"), &MicroSpec::default());
        for b in &mut r.ligand_bonds {
            if b.order == BondOrder::Aromatic {
                b.order = BondOrder::Single;
            }
        }
        let parsed = parse_complex(write_pdb(&r).as_bytes(), DocumentFormat::PdbLigand).unwrap();
        assert_eq!(parsed.n_residues(), r.n_residues());
        assert_eq!(parsed.n_atoms(), r.n_atoms());
        for (a, b) in parsed.residues.iter().zip(&r.residues) {
            assert_eq!(a.residue_type, b.residue_type);
            assert!(geom::dist(a.ca, b.ca) < 1e-3);
        }
        for (a, b) in parsed.ligand_atoms.iter().zip(&r.ligand_atoms) {
            assert_eq!(a.element, b.element);
            assert!(geom::dist(a.xyz, b.xyz) < 1e-3);
        }
        let mut got: Vec<_> = parsed.ligand_bonds.iter().map(|b| (b.i.min(b.j), b.i.max(b.j), b.order)).collect();
        let mut want: Vec<_> = r.ligand_bonds.iter().map(|b| (b.i.min(b.j), b.i.max(b.j), b.order)).collect();
        got.sort_by_key(|t| (t.0, t.1));
        want.sort_by_key(|t| (t.0, t.1));
        assert_eq!(got, want);
    }
}

#[test]
fn json_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for i in 0..20 {
        let r = synth::micro_complex(&mut rng, &format!("j{i}"), &MicroSpec::default());
        let text = to_json_string(&r);
        let back = parse_complex(text.as_bytes(), DocumentFormat::JsonComplex).unwrap();
        assert_eq!(back, r);
        assert_eq!(to_json_string(&back), text);
    }
}

#[test]
fn contact_count_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..20 {
        let r = synth::micro_complex(&mut rng, &format!("c{i}"), &MicroSpec::default());
        let cutoff = rng.gen_range(4.0..12.0);
        let mut n = 0;
        for res in &r.residues {
            for a in &r.ligand_atoms {
                let d = ((res.ca[0] - a.xyz[0]).powi(2) + (res.ca[1] - a.xyz[1]).powi(2) + (res.ca[2] - a.xyz[2]).powi(2)).sqrt();
                if d < cutoff {
                    n += 1;
                }
            }
        }
        assert_eq!(count_contacts(&r, cutoff), n);
    }
}

#[test]
fn chains_without_contacts_are_removed() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut r = synth::micro_complex(&mut rng, "chains", &MicroSpec::default());
    for res in &mut r.residues {
        res.chain = Some("A".into());
    }
    let far = |k: usize| Residue {
        residue_type: "GLY".into(),
        ca: [200.0 + 3.8 * k as f64, 0.0, 0.0],
        chain: Some("B".into()),
    };
    let kept = r.residues.len();
    r.residues.extend((0..3).map(far));
    let pruned = prune_chains(&r, 10.0);
    assert_eq!(pruned.n_residues(), kept);
    assert!(pruned.residues.iter().all(|x| x.chain.as_deref() == Some("A")));
}

#[test]
fn embedding_formats_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let rows: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let mut t = EmbeddingTable::new();
    t.insert("prot", rows.clone()).unwrap();
    let back = EmbeddingTable::from_tsv(t.to_tsv().as_bytes()).unwrap();
    assert_eq!(back.get("prot").unwrap(), rows.as_slice());

    let mut b = EmbeddingTable::new();
    b.add_binary("prot", &EmbeddingTable::binary_bytes(&rows)).unwrap();
    // The binary format stores single precision.
    let single: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| x as f32 as f64).collect()).collect();
    assert_eq!(b.get("prot").unwrap(), single.as_slice());
    assert_eq!(b.width(), Some(4));
    assert!(b.lookup("prot", 6).is_err());
}
