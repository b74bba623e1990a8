//! The equivariant layer: degree-weighted independent messaging inside each
//! molecule, cross-attention between them with a pair bias, and interface
//! messaging over ligand-residue contact edges.
//!
//! Coordinates enter only through squared distances and difference vectors,
//! so node features are E(3)-invariant and coordinate updates equivariant.

use std::sync::Arc;

use rand::Rng;

use crate::config::ModelConfig;
use crate::encoder::{init_opm, opm_pair_embedding};
use crate::molgraph::{cross_edges_from_coords, Graph};
use crate::params::{Ctx, Init, Part};
use crate::tape::{Tensor, Var};

/// Squared distances are fed to MLPs in units of (10 Å)^2.
pub const DIST2_SCALE: f64 = 0.01;

const RESIDUAL_GAIN: f64 = 0.5;

/// Directed message edges of one molecule, grouped by target.
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub n: usize,
    pub dst: Arc<[usize]>,
    pub src: Arc<[usize]>,
    /// Per-edge coordinate weight `w_ik`, `[E,1]`.
    pub weight: Tensor,
    /// 1 for nodes with at least one neighbour, `[n,1]`.
    pub has_nbr: Tensor,
}

/// Neighbour weights of node `i`: `d_k / Σ d_k` over its neighbours, or
/// `1/|N(i)|` when `uniform`.
pub fn degree_weights(graph: &Graph, i: usize, uniform: bool) -> Vec<(usize, f64)> {
    let nb = graph.neighbors(i);
    if uniform {
        let w = 1.0 / nb.len() as f64;
        return nb.iter().map(|&k| (k, w)).collect();
    }
    let total: usize = nb.iter().map(|&k| graph.degree[k]).sum();
    nb.iter()
        .map(|&k| (k, graph.degree[k] as f64 / total as f64))
        .collect()
}

impl EdgeList {
    pub fn from_graph(graph: &Graph, uniform: bool) -> Self {
        let n = graph.n_nodes();
        let (mut dst, mut src, mut weight) = (Vec::new(), Vec::new(), Vec::new());
        let mut has_nbr = Tensor::zeros(n, 1);
        for i in 0..n {
            for (k, w) in degree_weights(graph, i, uniform) {
                dst.push(i);
                src.push(k);
                weight.push(w);
                has_nbr.data[i] = 1.0;
            }
        }
        let e = weight.len();
        Self {
            n,
            dst: dst.into(),
            src: src.into(),
            weight: Tensor::from_vec(e, 1, weight),
            has_nbr,
        }
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

/// Ligand-residue contact edges in index form.
#[derive(Debug, Clone)]
pub struct CrossIndex {
    pub pairs: Vec<(usize, usize)>,
    pub lig: Arc<[usize]>,
    pub prot: Arc<[usize]>,
    /// Row of each pair in the `[n_l * n_p, ·]` pair tensor.
    pub pair_row: Arc<[usize]>,
}

impl CrossIndex {
    pub fn new(pairs: Vec<(usize, usize)>, n_p: usize) -> Self {
        let lig: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let prot: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
        let pair_row = pairs.iter().map(|&(i, j)| i * n_p + j).collect();
        Self {
            pairs,
            lig,
            prot,
            pair_row,
        }
    }

    pub fn from_coords(x_l: &Tensor, x_p: &Tensor, cutoff: f64) -> Self {
        let pts = |t: &Tensor| (0..t.rows).map(|r| [t.at(r, 0), t.at(r, 1), t.at(r, 2)]).collect::<Vec<_>>();
        let edges = cross_edges_from_coords(&pts(x_l), &pts(x_p), cutoff);
        Self::new(edges.pairs, x_p.rows)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Ligand,
    Protein,
}

impl Side {
    pub fn tag(self) -> &'static str {
        match self {
            Side::Ligand => "lig",
            Side::Protein => "prot",
        }
    }
}

/// Node embeddings, coordinates and the pair embedding.
#[derive(Debug, Clone, Copy)]
pub struct GraphState {
    pub h_l: Var,
    pub h_p: Var,
    pub x_l: Var,
    pub x_p: Var,
    /// `[n_l * n_p, d_pair]`.
    pub z: Var,
}

fn coord_updates(cfg: &ModelConfig, side: Side) -> bool {
    side == Side::Ligand || !cfg.freeze_protein
}

pub fn init_independent<R: Rng>(init: &mut Init<'_, R>, prefix: &str, cfg: &ModelConfig, side: Side) {
    let d = cfg.d_node;
    init.layer_norm(&format!("{prefix}.ln"), d);
    init.mlp(&format!("{prefix}.phi_e"), 2 * d + 1, d, 1.0);
    init.mlp(&format!("{prefix}.phi_h"), 2 * d, d, RESIDUAL_GAIN);
    if coord_updates(cfg, side) {
        init.mlp(&format!("{prefix}.phi_x"), d, 1, cfg.gate_init_gain);
    }
}

fn scaled_d2(ctx: &mut Ctx<'_>, diff: Var) -> Var {
    let sq = ctx.tape.square(diff);
    let d2 = ctx.tape.row_sum(sq);
    ctx.tape.scale(d2, DIST2_SCALE)
}

/// One round of message passing inside a molecule.
///
/// `m_ik = φ_e(h_i, h_k, |x_i - x_k|²)`, `h_i += φ_h(h_i, Σ_k m_ik)`,
/// `x_i += Σ_k w_ik (x_i - x_k) φ_x(m_ik)`. Nodes without neighbours are
/// left unchanged; `x` is untouched when `update_x` is false.
pub fn independent_update(
    ctx: &mut Ctx<'_>,
    prefix: &str,
    h: Var,
    x: Var,
    edges: &EdgeList,
    update_x: bool,
) -> (Var, Var) {
    if edges.is_empty() {
        return (h, x);
    }
    let hn = ctx.layer_norm(&format!("{prefix}.ln"), h);
    let xi = ctx.tape.gather(x, &edges.dst);
    let xk = ctx.tape.gather(x, &edges.src);
    let diff = ctx.tape.sub(xi, xk);
    let d2 = scaled_d2(ctx, diff);
    let m = ctx.mlp_split(
        &format!("{prefix}.phi_e"),
        &[Part::Node(hn, &edges.dst), Part::Node(hn, &edges.src), Part::Edge(d2)],
    );
    let agg = ctx.tape.scatter_add(m, &edges.dst, edges.n);
    let h_in = ctx.tape.concat_cols(&[hn, agg]);
    let dh = ctx.mlp(&format!("{prefix}.phi_h"), h_in);
    let mask = ctx.constant(edges.has_nbr.clone());
    let dh = ctx.tape.mul_col(dh, mask);
    let h = ctx.tape.add(h, dh);
    if !update_x {
        return (h, x);
    }
    let gate = ctx.mlp(&format!("{prefix}.phi_x"), m);
    let w = ctx.constant(edges.weight.clone());
    let coef = ctx.tape.mul(gate, w);
    let upd = ctx.tape.mul_col(diff, coef);
    let dx = ctx.tape.scatter_add(upd, &edges.dst, edges.n);
    (h, ctx.tape.add(x, dx))
}

pub fn init_cross_attention<R: Rng>(init: &mut Init<'_, R>, prefix: &str, cfg: &ModelConfig) {
    let d = cfg.d_node;
    init.layer_norm(&format!("{prefix}.ln_l"), d);
    init.layer_norm(&format!("{prefix}.ln_p"), d);
    init.linear(&format!("{prefix}.bias"), cfg.d_pair, cfg.heads, 1.0);
    for side in ["lig", "prot"] {
        for m in ["q", "k", "v"] {
            init.linear(&format!("{prefix}.{side}.{m}"), d, d, 1.0);
        }
        init.linear(&format!("{prefix}.{side}.out"), d, d, RESIDUAL_GAIN);
    }
    init_opm(init, &format!("{prefix}.opm"), cfg);
}

/// Multi-head attention of each molecule over the other with pair bias
/// `b_ij = Linear(z_ij)`, residual update of both sides, then the pair
/// embedding is recomputed from the updated embeddings.
pub fn cross_attention_update(
    ctx: &mut Ctx<'_>,
    prefix: &str,
    h_l: Var,
    h_p: Var,
    z: Var,
    heads: usize,
) -> (Var, Var, Var) {
    let n_l = ctx.value(h_l).rows;
    let n_p = ctx.value(h_p).rows;
    let d = ctx.value(h_l).cols;
    let c = d / heads;
    let ln_l = ctx.layer_norm(&format!("{prefix}.ln_l"), h_l);
    let ln_p = ctx.layer_norm(&format!("{prefix}.ln_p"), h_p);
    let bias = ctx.linear(&format!("{prefix}.bias"), z);
    let mut out = Vec::with_capacity(2);
    for (side, own, other, transpose) in [("lig", ln_l, ln_p, false), ("prot", ln_p, ln_l, true)] {
        let q = ctx.linear(&format!("{prefix}.{side}.q"), own);
        let k = ctx.linear(&format!("{prefix}.{side}.k"), other);
        let v = ctx.linear(&format!("{prefix}.{side}.v"), other);
        let mut per_head = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = ctx.tape.slice_cols(q, hd * c, c);
            let kh = ctx.tape.slice_cols(k, hd * c, c);
            let vh = ctx.tape.slice_cols(v, hd * c, c);
            let logits = ctx.tape.matmul_nt(qh, kh);
            let logits = ctx.tape.scale(logits, 1.0 / (c as f64).sqrt());
            let b = ctx.tape.pair_column(bias, hd, n_l, n_p, transpose);
            let logits = ctx.tape.add(logits, b);
            let a = ctx.tape.row_softmax(logits);
            per_head.push(ctx.tape.matmul(a, vh));
        }
        let cat = ctx.tape.concat_cols(&per_head);
        out.push(ctx.linear(&format!("{prefix}.{side}.out"), cat));
    }
    let h_l = ctx.tape.add(h_l, out[0]);
    let h_p = ctx.tape.add(h_p, out[1]);
    let z = opm_pair_embedding(ctx, &format!("{prefix}.opm"), h_l, h_p);
    (h_l, h_p, z)
}

pub fn init_interface<R: Rng>(init: &mut Init<'_, R>, prefix: &str, cfg: &ModelConfig, side: Side) {
    let d = cfg.d_node;
    init.layer_norm(&format!("{prefix}.ln_s"), d);
    init.layer_norm(&format!("{prefix}.ln_o"), d);
    init.mlp(&format!("{prefix}.phi_q"), d, d, 1.0 / (d as f64).sqrt());
    init.mlp(&format!("{prefix}.phi_k"), d + 1, d, 1.0);
    init.mlp(&format!("{prefix}.phi_v"), d + 1, d, RESIDUAL_GAIN);
    init.mlp(&format!("{prefix}.phi_b"), cfg.d_pair, 1, 1.0);
    if coord_updates(cfg, side) {
        init.mlp(&format!("{prefix}.phi_xv"), d, 1, cfg.gate_init_gain);
    }
}

/// Attention over each node's contact partners in the other molecule:
/// `α_ij = softmax_j(q_i·k_ij + b_ij)`, `h_i += Σ α_ij v_ij`,
/// `x_i += Σ α_ij (x_j - x_i) φ_xv(v_ij)`.
#[allow(clippy::too_many_arguments)]
pub fn interface_update(
    ctx: &mut Ctx<'_>,
    prefix: &str,
    side: Side,
    h_self: Var,
    h_other: Var,
    x_self: Var,
    x_other: Var,
    z: Var,
    cross: &CrossIndex,
    update_x: bool,
) -> (Var, Var) {
    if cross.is_empty() {
        return (h_self, x_self);
    }
    let (dst, src) = match side {
        Side::Ligand => (&cross.lig, &cross.prot),
        Side::Protein => (&cross.prot, &cross.lig),
    };
    let n = ctx.value(h_self).rows;
    let hs = ctx.layer_norm(&format!("{prefix}.ln_s"), h_self);
    let ho = ctx.layer_norm(&format!("{prefix}.ln_o"), h_other);
    let q = ctx.mlp(&format!("{prefix}.phi_q"), hs);
    let qi = ctx.tape.gather(q, dst);
    let xi = ctx.tape.gather(x_self, dst);
    let xj = ctx.tape.gather(x_other, src);
    let diff = ctx.tape.sub(xj, xi);
    let d2 = scaled_d2(ctx, diff);
    let kv_in = [Part::Node(ho, src), Part::Edge(d2)];
    let k = ctx.mlp_split(&format!("{prefix}.phi_k"), &kv_in);
    let v = ctx.mlp_split(&format!("{prefix}.phi_v"), &kv_in);
    let zb = ctx.tape.gather(z, &cross.pair_row);
    let b = ctx.mlp(&format!("{prefix}.phi_b"), zb);
    let qk = ctx.tape.mul(qi, k);
    let qk = ctx.tape.row_sum(qk);
    let logits = ctx.tape.add(qk, b);
    let alpha = ctx.tape.segment_softmax(logits, dst, n);
    let av = ctx.tape.mul_col(v, alpha);
    let dh = ctx.tape.scatter_add(av, dst, n);
    let h = ctx.tape.add(h_self, dh);
    if !update_x {
        return (h, x_self);
    }
    let gate = ctx.mlp(&format!("{prefix}.phi_xv"), v);
    let coef = ctx.tape.mul(alpha, gate);
    let upd = ctx.tape.mul_col(diff, coef);
    let dx = ctx.tape.scatter_add(upd, dst, n);
    (h, ctx.tape.add(x_self, dx))
}

pub fn init_layer<R: Rng>(init: &mut Init<'_, R>, prefix: &str, cfg: &ModelConfig) {
    for side in [Side::Ligand, Side::Protein] {
        init_independent(init, &format!("{prefix}.{}.ind", side.tag()), cfg, side);
    }
    init_cross_attention(init, &format!("{prefix}.cross"), cfg);
    for side in [Side::Ligand, Side::Protein] {
        init_interface(init, &format!("{prefix}.{}.iface", side.tag()), cfg, side);
    }
}

/// Graph inputs of a layer stack: intramolecular edges per side.
pub struct StackGraphs<'a> {
    pub ligand: &'a EdgeList,
    pub protein: &'a EdgeList,
}

/// Independent messaging, cross-attention, interface messaging. Cross edges
/// are rebuilt from the incoming coordinates; they are returned so callers
/// can audit the discrete structure used.
pub fn layer_forward(
    ctx: &mut Ctx<'_>,
    prefix: &str,
    state: GraphState,
    graphs: &StackGraphs<'_>,
    cfg: &ModelConfig,
) -> (GraphState, CrossIndex) {
    let cross = CrossIndex::from_coords(ctx.value(state.x_l), ctx.value(state.x_p), cfg.cross_cutoff);
    let upd_p = coord_updates(cfg, Side::Protein);
    let (h_l, x_l) = independent_update(ctx, &format!("{prefix}.lig.ind"), state.h_l, state.x_l, graphs.ligand, true);
    let (h_p, x_p) = independent_update(
        ctx,
        &format!("{prefix}.prot.ind"),
        state.h_p,
        state.x_p,
        graphs.protein,
        upd_p,
    );
    let (h_l, h_p, z) = cross_attention_update(ctx, &format!("{prefix}.cross"), h_l, h_p, state.z, cfg.heads);
    let (h_l2, x_l2) = interface_update(
        ctx,
        &format!("{prefix}.lig.iface"),
        Side::Ligand,
        h_l,
        h_p,
        x_l,
        x_p,
        z,
        &cross,
        true,
    );
    let (h_p2, x_p2) = interface_update(
        ctx,
        &format!("{prefix}.prot.iface"),
        Side::Protein,
        h_p,
        h_l,
        x_p,
        x_l,
        z,
        &cross,
        upd_p,
    );
    (
        GraphState {
            h_l: h_l2,
            h_p: h_p2,
            x_l: x_l2,
            x_p: x_p2,
            z,
        },
        cross,
    )
}

/// Layers `prefix.layer0 .. layer{m-1}` applied in order.
pub fn stack_forward(
    ctx: &mut Ctx<'_>,
    prefix: &str,
    m: usize,
    mut state: GraphState,
    graphs: &StackGraphs<'_>,
    cfg: &ModelConfig,
) -> (GraphState, Vec<CrossIndex>) {
    let mut used = Vec::with_capacity(m);
    for k in 0..m {
        let (s, cross) = layer_forward(ctx, &format!("{prefix}.layer{k}"), state, graphs, cfg);
        state = s;
        used.push(cross);
    }
    (state, used)
}

pub fn init_stack<R: Rng>(init: &mut Init<'_, R>, prefix: &str, m: usize, cfg: &ModelConfig) {
    for k in 0..m {
        init_layer(init, &format!("{prefix}.layer{k}"), cfg);
    }
}
