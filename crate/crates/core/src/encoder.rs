//! Node features (chemical/sequence base features plus curvature statistics),
//! their learned projection, and the outer-product pair embedding.

use rand::Rng;

use crate::config::{ModelConfig, ProteinMode};
use crate::curvature::LcfVector;
use crate::error::{Error, Result};
use crate::molgraph::Graph;
use crate::params::{Ctx, Init};
use crate::structio::{BondOrder, Chirality, ComplexRecord, EmbeddingTable};
use crate::tape::{Tensor, Var};

pub const LIGAND_BASE_WIDTH: usize = 52;
pub const PROTEIN_FALLBACK_WIDTH: usize = 25;

/// Element slots; anything else lands in the final "other" slot.
pub const ELEMENTS: [&str; 17] = [
    "H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se", "Br", "I", "Na", "K", "Mg", "Zn",
];

/// Column offsets of each block of the ligand layout.
pub mod slots {
    pub const ELEMENT: usize = 0; // 18
    pub const DEGREE: usize = 18; // 0..=6
    pub const CHARGE: usize = 25; // -2..=2
    pub const VALENCE: usize = 30; // 0..=7
    pub const AROMATIC: usize = 38;
    pub const RING: usize = 39;
    pub const H_COUNT: usize = 40; // 0..=4
    pub const CHIRALITY: usize = 45; // cw, ccw
    pub const BOND_HIST: usize = 47; // single, double, triple, aromatic
    pub const BIAS: usize = 51;
}

fn one_hot_clamped(row: &mut [f64], offset: usize, value: i64, lo: i64, hi: i64, what: &str) {
    if value < lo || value > hi {
        log::debug!("{what} {value} outside [{lo}, {hi}], clamped");
    }
    row[offset + (value.clamp(lo, hi) - lo) as usize] = 1.0;
}

fn element_slot(symbol: &str) -> usize {
    ELEMENTS
        .iter()
        .position(|e| e.eq_ignore_ascii_case(symbol))
        .unwrap_or(ELEMENTS.len())
}

/// `n_atoms x 52` ligand features.
pub fn ligand_base_features(record: &ComplexRecord, graph: &Graph) -> Tensor {
    let n = record.n_atoms();
    let mut valence = vec![0.0f64; n];
    let mut hist = vec![[0.0f64; 4]; n];
    for b in &record.ligand_bonds {
        let k = match b.order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        for a in [b.i, b.j] {
            valence[a] += b.order.valence();
            hist[a][k] += 1.0;
        }
    }
    let mut out = Tensor::zeros(n, LIGAND_BASE_WIDTH);
    for (i, atom) in record.ligand_atoms.iter().enumerate() {
        let row = out.row_mut(i);
        row[slots::ELEMENT + element_slot(&atom.element)] = 1.0;
        one_hot_clamped(row, slots::DEGREE, graph.degree[i] as i64, 0, 6, "degree");
        one_hot_clamped(row, slots::CHARGE, atom.formal_charge as i64, -2, 2, "formal charge");
        one_hot_clamped(row, slots::VALENCE, valence[i].round() as i64, 0, 7, "valence");
        row[slots::AROMATIC] = atom.aromatic as u8 as f64;
        row[slots::RING] = atom.in_ring as u8 as f64;
        one_hot_clamped(row, slots::H_COUNT, atom.h_count as i64, 0, 4, "hydrogen count");
        match atom.chirality {
            Some(Chirality::Cw) => row[slots::CHIRALITY] = 1.0,
            Some(Chirality::Ccw) => row[slots::CHIRALITY + 1] = 1.0,
            None => {}
        }
        row[slots::BOND_HIST..slots::BOND_HIST + 4].copy_from_slice(&hist[i]);
        row[slots::BIAS] = 1.0;
    }
    out
}

/// Parse a per-atom override file: `atom_index<TAB>52 values` per line.
pub fn ligand_features_from_tsv(text: &str, n_atoms: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(n_atoms, LIGAND_BASE_WIDTH);
    let mut seen = vec![false; n_atoms];
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |m: String| Error::Format(format!("line {}: {m}", ln + 1));
        if fields.len() != LIGAND_BASE_WIDTH + 1 {
            return Err(bad(format!("expected {} fields, got {}", LIGAND_BASE_WIDTH + 1, fields.len())));
        }
        let idx: usize = fields[0].parse().map_err(|_| bad(format!("bad atom index {:?}", fields[0])))?;
        if idx >= n_atoms {
            return Err(bad(format!("atom index {idx} out of range")));
        }
        for (k, f) in fields[1..].iter().enumerate() {
            out.row_mut(idx)[k] = f.parse().map_err(|_| bad(format!("bad value {f:?}")))?;
        }
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Format(format!("no features for atom {missing}")));
    }
    Ok(out)
}

pub const AMINO_ACIDS: [&str; 20] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET", "PHE",
    "PRO", "SER", "THR", "TRP", "TYR", "VAL",
];

// Kyte-Doolittle hydropathy, net charge at pH 7, polar flag, molecular
// weight (Da), aromatic flag; same order as AMINO_ACIDS.
const PHYSCHEM: [[f64; 5]; 20] = [
    [1.8, 0.0, 0.0, 89.09, 0.0],
    [-4.5, 1.0, 1.0, 174.20, 0.0],
    [-3.5, 0.0, 1.0, 132.12, 0.0],
    [-3.5, -1.0, 1.0, 133.10, 0.0],
    [2.5, 0.0, 0.0, 121.16, 0.0],
    [-3.5, 0.0, 1.0, 146.15, 0.0],
    [-3.5, -1.0, 1.0, 147.13, 0.0],
    [-0.4, 0.0, 0.0, 75.07, 0.0],
    [-3.2, 0.0, 1.0, 155.16, 0.0],
    [4.5, 0.0, 0.0, 131.17, 0.0],
    [3.8, 0.0, 0.0, 131.17, 0.0],
    [-3.9, 1.0, 1.0, 146.19, 0.0],
    [1.9, 0.0, 0.0, 149.21, 0.0],
    [2.8, 0.0, 0.0, 165.19, 1.0],
    [-1.6, 0.0, 0.0, 115.13, 0.0],
    [-0.8, 0.0, 1.0, 105.09, 0.0],
    [-0.7, 0.0, 1.0, 119.12, 0.0],
    [-0.9, 0.0, 0.0, 204.23, 1.0],
    [-1.3, 0.0, 1.0, 181.19, 1.0],
    [4.2, 0.0, 0.0, 117.15, 0.0],
];
/// Min-max normalization ranges for the physicochemical scalars.
const PHYSCHEM_RANGE: [(f64, f64); 5] = [(-4.5, 4.5), (-1.0, 1.0), (0.0, 1.0), (75.07, 204.23), (0.0, 1.0)];

pub fn amino_acid_index(code: &str) -> Option<usize> {
    AMINO_ACIDS.iter().position(|a| a.eq_ignore_ascii_case(code))
}

/// 25 fallback features of one residue; unknown types get an all-zero row.
pub fn fallback_residue_features(code: &str) -> [f64; PROTEIN_FALLBACK_WIDTH] {
    let mut row = [0.0; PROTEIN_FALLBACK_WIDTH];
    match amino_acid_index(code) {
        Some(k) => {
            row[k] = 1.0;
            for (s, (&v, &(lo, hi))) in PHYSCHEM[k].iter().zip(&PHYSCHEM_RANGE).enumerate() {
                row[20 + s] = (v - lo) / (hi - lo);
            }
        }
        None => log::debug!("unknown residue type {code}, zero features"),
    }
    row
}

/// Per-residue base features: table rows in precomputed mode, otherwise the
/// fallback scheme.
pub fn protein_base_features(
    record: &ComplexRecord,
    mode: ProteinMode,
    table: Option<&EmbeddingTable>,
) -> Result<Tensor> {
    let n = record.n_residues();
    match mode {
        ProteinMode::Fallback => {
            let rows: Vec<_> = record
                .residues
                .iter()
                .map(|r| fallback_residue_features(&r.residue_type))
                .collect();
            Ok(Tensor::from_rows(&rows, PROTEIN_FALLBACK_WIDTH))
        }
        ProteinMode::Precomputed { width } => {
            let key = record
                .embedding_key
                .as_deref()
                .ok_or_else(|| Error::MissingEmbedding(format!("{} has no embedding_key", record.id)))?;
            let table = table.ok_or_else(|| Error::MissingEmbedding(key.to_string()))?;
            let rows = table.lookup(key, n)?;
            if rows.first().map(|r| r.len()) != Some(width) {
                return Err(Error::Shape(format!(
                    "embedding width {:?} does not match configured {width}",
                    table.width()
                )));
            }
            Ok(Tensor::from_rows(rows, width))
        }
    }
}

/// Concatenate base features with curvature statistics (zeros when `use_lcf`
/// is off).
pub fn concat_lcf(base: &Tensor, lcf: &[LcfVector], use_lcf: bool) -> Result<Tensor> {
    if base.rows != lcf.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} curvature rows",
            base.rows,
            lcf.len()
        )));
    }
    let w = base.cols + LcfVector::WIDTH;
    let mut out = Tensor::zeros(base.rows, w);
    for r in 0..base.rows {
        let row = out.row_mut(r);
        row[..base.cols].copy_from_slice(base.row(r));
        if use_lcf {
            row[base.cols..].copy_from_slice(&lcf[r].0);
        }
    }
    Ok(out)
}

pub fn init_encoder<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig) {
    init.linear("enc.lig", LIGAND_BASE_WIDTH + LcfVector::WIDTH, cfg.d_node, 1.0);
    init.linear("enc.prot", cfg.protein_mode.width() + LcfVector::WIDTH, cfg.d_node, 1.0);
}

pub struct AssembledFeatures {
    pub ligand: Var,
    pub protein: Var,
}

/// Learned projection of `[base | LCF]` rows to the node width.
pub fn assemble_node_features(ctx: &mut Ctx<'_>, ligand: &Tensor, protein: &Tensor) -> Result<AssembledFeatures> {
    for (name, t) in [("enc.lig", ligand), ("enc.prot", protein)] {
        let w = ctx.store().get(&format!("{name}.w")).expect("encoder weights");
        if w.rows != t.cols {
            return Err(Error::Shape(format!(
                "{name}: input width {} but projection expects {}",
                t.cols, w.rows
            )));
        }
    }
    let l = ctx.constant(ligand.clone());
    let p = ctx.constant(protein.clone());
    Ok(AssembledFeatures {
        ligand: ctx.linear("enc.lig", l),
        protein: ctx.linear("enc.prot", p),
    })
}

pub fn init_opm<R: Rng>(init: &mut Init<'_, R>, prefix: &str, cfg: &ModelConfig) {
    init.layer_norm(&format!("{prefix}.ln_l"), cfg.d_node);
    init.layer_norm(&format!("{prefix}.ln_p"), cfg.d_node);
    init.linear(&format!("{prefix}.a"), cfg.d_node, cfg.d_opm, 1.0);
    init.linear(&format!("{prefix}.b"), cfg.d_node, cfg.d_opm, 1.0);
    init.linear(&format!("{prefix}.out"), cfg.d_opm * cfg.d_opm, cfg.d_pair, 1.0);
}

/// `z [n_l * n_p, d_pair]`, row `i * n_p + j` for ligand atom `i` and residue `j`.
pub fn opm_pair_embedding(ctx: &mut Ctx<'_>, prefix: &str, h_l: Var, h_p: Var) -> Var {
    let a = ctx.layer_norm(&format!("{prefix}.ln_l"), h_l);
    let a = ctx.linear(&format!("{prefix}.a"), a);
    let b = ctx.layer_norm(&format!("{prefix}.ln_p"), h_p);
    let b = ctx.linear(&format!("{prefix}.b"), b);
    let w = ctx.p(&format!("{prefix}.out.w"));
    let bias = ctx.p(&format!("{prefix}.out.b"));
    ctx.tape.opm(a, b, w, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::build_ligand_graph;
    use crate::params::ParamStore;
    use crate::structio::{Bond, LigandAtom, Residue};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn atom(element: &str) -> LigandAtom {
        LigandAtom {
            element: element.into(),
            formal_charge: 0,
            aromatic: false,
            in_ring: false,
            h_count: 0,
            chirality: None,
            xyz: [0.0; 3],
        }
    }

    fn record(atoms: Vec<LigandAtom>, bonds: Vec<Bond>) -> ComplexRecord {
        ComplexRecord {
            id: "t".into(),
            residues: vec![Residue {
                residue_type: "GLY".into(),
                ca: [0.0; 3],
                chain: None,
            }],
            ligand_atoms: atoms,
            ligand_bonds: bonds,
            conformer: None,
            embedding_key: None,
        }
    }

    #[test]
    fn layout_widths_add_up() {
        assert_eq!(slots::BIAS + 1, LIGAND_BASE_WIDTH);
        assert_eq!(ELEMENTS.len() + 1, slots::DEGREE);
    }

    #[test]
    fn aromatic_ring_carbon() {
        let mut c = atom("C");
        c.aromatic = true;
        c.in_ring = true;
        let bonds = vec![
            Bond { i: 0, j: 1, order: BondOrder::Aromatic },
            Bond { i: 0, j: 2, order: BondOrder::Aromatic },
        ];
        let r = record(vec![c, atom("C"), atom("C")], bonds);
        let f = ligand_base_features(&r, &build_ligand_graph(&r));
        let row = f.row(0);
        for (start, len) in [(0, 18), (18, 7), (25, 5), (30, 8), (40, 5)] {
            assert_eq!(row[start..start + len].iter().sum::<f64>(), 1.0);
        }
        assert_eq!(row[slots::ELEMENT + 2], 1.0);
        assert_eq!(row[slots::DEGREE + 2], 1.0);
        assert_eq!(row[slots::CHARGE + 2], 1.0);
        assert_eq!(row[slots::VALENCE + 3], 1.0);
        assert_eq!((row[slots::AROMATIC], row[slots::RING], row[slots::BIAS]), (1.0, 1.0, 1.0));
        assert_eq!(row[slots::BOND_HIST + 3], 2.0);
    }

    #[test]
    fn default_atom_sums_to_block_count() {
        let r = record(vec![atom("C")], vec![]);
        let f = ligand_base_features(&r, &build_ligand_graph(&r));
        // element, degree, charge, valence, h-count one-hots plus the bias
        assert_eq!(f.row(0).iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn charge_is_clamped() {
        let mut a = atom("O");
        a.formal_charge = -3;
        let mut b = atom("Xx");
        b.formal_charge = 5;
        b.h_count = 9;
        let r = record(vec![a, b], vec![]);
        let f = ligand_base_features(&r, &build_ligand_graph(&r));
        assert_eq!(f.row(0)[slots::CHARGE], 1.0);
        assert_eq!(f.row(1)[slots::CHARGE + 4], 1.0);
        assert_eq!(f.row(1)[slots::H_COUNT + 4], 1.0);
        assert_eq!(f.row(1)[slots::ELEMENT + 17], 1.0);
    }

    #[test]
    fn fallback_residues() {
        let gly = fallback_residue_features("GLY");
        assert_eq!(gly[7], 1.0);
        assert_eq!(gly[..20].iter().sum::<f64>(), 1.0);
        assert_eq!(gly[24], 0.0);
        assert_eq!(gly[23], 0.0);
        let trp = fallback_residue_features("TRP");
        assert_eq!(trp[24], 1.0);
        assert_eq!(trp[23], 1.0);
        assert!(trp.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn precomputed_lookup() {
        let mut r = record(vec![atom("C")], vec![]);
        r.residues = vec![r.residues[0].clone(); 3];
        r.embedding_key = Some("k".into());
        let mut table = EmbeddingTable::new();
        table.insert("k", vec![vec![0.5; 1280]; 3]).unwrap();
        let f = protein_base_features(&r, ProteinMode::Precomputed { width: 1280 }, Some(&table)).unwrap();
        assert_eq!(f.shape(), (3, 1280));
        r.embedding_key = Some("other".into());
        assert!(matches!(
            protein_base_features(&r, ProteinMode::Precomputed { width: 1280 }, Some(&table)),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn projection_widths_and_linearity() {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_encoder(&mut Init { store: &mut store, rng: &mut rng }, &cfg);
        assert_eq!(store.get("enc.lig.w").unwrap().rows, 57);
        assert_eq!(store.get("enc.prot.w").unwrap().rows, 30);
        let mut ctx = Ctx::new(&store, false);
        let out = assemble_node_features(&mut ctx, &Tensor::zeros(2, 57), &Tensor::zeros(3, 30)).unwrap();
        assert_eq!(ctx.value(out.ligand).max_abs(), 0.0);
        assert_eq!(ctx.value(out.protein).shape(), (3, cfg.d_node));
        assert!(assemble_node_features(&mut ctx, &Tensor::zeros(2, 52), &Tensor::zeros(3, 30)).is_err());
    }

    #[test]
    fn lcf_switch_zeroes_slots() {
        let base = Tensor::filled(2, 3, 1.0);
        let lcf = vec![LcfVector([0.5; 5]); 2];
        let on = concat_lcf(&base, &lcf, true).unwrap();
        let off = concat_lcf(&base, &lcf, false).unwrap();
        assert_eq!(on.row(1), &[1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5]);
        assert_eq!(off.row(1), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(off, concat_lcf(&base, &[LcfVector::default(); 2], true).unwrap());
    }

    fn opm_store(cfg: &ModelConfig) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        init_opm(&mut Init { store: &mut store, rng: &mut rng }, "o", cfg);
        store
    }

    #[test]
    fn opm_zero_inner_maps_give_bias() {
        let cfg = ModelConfig::tiny();
        let mut store = opm_store(&cfg);
        for name in ["o.a.w", "o.a.b", "o.b.w", "o.b.b"] {
            let t = store.get_mut(name).unwrap();
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        store.get_mut("o.out.b").unwrap().data = vec![0.25, -1.0, 2.0, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = |n: usize, rng: &mut ChaCha8Rng| {
            Tensor::from_vec(n, cfg.d_node, (0..n * cfg.d_node).map(|_| rng.gen_range(-1.0..1.0)).collect())
        };
        let (hl, hp) = (h(3, &mut rng), h(2, &mut rng));
        let mut ctx = Ctx::new(&store, false);
        let (l, p) = (ctx.constant(hl), ctx.constant(hp));
        let z = opm_pair_embedding(&mut ctx, "o", l, p);
        for r in 0..6 {
            assert_eq!(ctx.value(z).row(r), &[0.25, -1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn opm_rank_one_case() {
        let cfg = ModelConfig {
            d_opm: 1,
            ..ModelConfig::tiny()
        };
        let store = opm_store(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hl = Tensor::from_vec(2, 8, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let hp = Tensor::from_vec(3, 8, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut ctx = Ctx::new(&store, false);
        let (l, p) = (ctx.constant(hl), ctx.constant(hp));
        let a = ctx.layer_norm("o.ln_l", l);
        let a = ctx.linear("o.a", a);
        let b = ctx.layer_norm("o.ln_p", p);
        let b = ctx.linear("o.b", b);
        let z = opm_pair_embedding(&mut ctx, "o", l, p);
        let (w, bias) = (store.get("o.out.w").unwrap(), store.get("o.out.b").unwrap());
        for i in 0..2 {
            for j in 0..3 {
                let s = ctx.value(a).at(i, 0) * ctx.value(b).at(j, 0);
                for c in 0..cfg.d_pair {
                    let expect = s * w.at(0, c) + bias.at(0, c);
                    assert!((ctx.value(z).at(i * 3 + j, c) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn opm_permutes_with_ligand_rows() {
        let cfg = ModelConfig::tiny();
        let store = opm_store(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hl = Tensor::from_vec(3, 8, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let hp = Tensor::from_vec(2, 8, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let perm = [2usize, 0, 1];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&k| hl.row(k).to_vec()).collect();
        let hl_perm = Tensor::from_rows(&rows, 8);
        let mut ctx = Ctx::new(&store, false);
        let (l, lp, p) = (ctx.constant(hl), ctx.constant(hl_perm), ctx.constant(hp));
        let z = opm_pair_embedding(&mut ctx, "o", l, p);
        let zp = opm_pair_embedding(&mut ctx, "o", lp, p);
        for (new, &old) in perm.iter().enumerate() {
            for j in 0..2 {
                assert_eq!(ctx.value(zp).row(new * 2 + j), ctx.value(z).row(old * 2 + j));
            }
        }
    }
}
