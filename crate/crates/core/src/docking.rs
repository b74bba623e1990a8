//! Pose initialization at the pocket center, recycled refinement through the
//! docking stack, and the docking losses.

use std::sync::Arc;

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::net::{init_stack, stack_forward, CrossIndex, GraphState, StackGraphs};
use crate::params::{Ctx, Init};
use crate::tape::{Tensor, Unary, Var};

/// Coordinates beyond this magnitude (Å) abort refinement.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

pub fn points_to_tensor(points: &[Vec3]) -> Tensor {
    Tensor::from_rows(points, 3)
}

pub fn tensor_to_points(t: &Tensor) -> Vec<Vec3> {
    (0..t.rows).map(|r| [t.at(r, 0), t.at(r, 1), t.at(r, 2)]).collect()
}

/// Translate `conformer` so its centroid sits at `center`.
pub fn init_pose(conformer: &[Vec3], center: Vec3) -> Vec<Vec3> {
    let shift = geom::sub(center, geom::centroid(conformer));
    conformer.iter().map(|p| geom::add(*p, shift)).collect()
}

/// Tape version of [`init_pose`]; gradients flow into `center` (`[1,3]`).
pub fn init_pose_var(ctx: &mut Ctx<'_>, conformer: &[Vec3], center: Var) -> Var {
    let c = geom::centroid(conformer);
    let centered: Vec<Vec3> = conformer.iter().map(|p| geom::sub(*p, c)).collect();
    let base = ctx.constant(points_to_tensor(&centered));
    ctx.tape.add_row(base, center)
}

pub fn init_docking<R: Rng>(init: &mut Init<'_, R>, cfg: &ModelConfig) {
    crate::encoder::init_opm(init, "dock.opm_init", cfg);
    init_stack(init, "dock", cfg.m2, cfg);
    init.mlp("dock.dist_head", cfg.d_pair, 1, 1.0);
}

pub struct Refinement {
    pub state: GraphState,
    /// Ligand coordinates after each pass through the stack.
    pub trace: Vec<Tensor>,
    /// Cross edges used by every layer application, in order.
    pub cross: Vec<CrossIndex>,
}

/// `recycles` passes through the shared docking stack.
pub fn refine(
    ctx: &mut Ctx<'_>,
    mut state: GraphState,
    graphs: &StackGraphs<'_>,
    cfg: &ModelConfig,
) -> Result<Refinement> {
    let mut trace = Vec::with_capacity(cfg.recycles);
    let mut cross = Vec::new();
    for pass in 0..cfg.recycles {
        let (s, used) = stack_forward(ctx, "dock", cfg.m2, state, graphs, cfg);
        state = s;
        cross.extend(used);
        let x = ctx.value(state.x_l);
        let worst = x.max_abs();
        if !(worst <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence(format!(
                "ligand coordinate magnitude {worst:e} after refinement pass {pass}; last pose {:?}",
                tensor_to_points(x)
            )));
        }
        trace.push(x.clone());
    }
    Ok(Refinement { state, trace, cross })
}

/// Mean over atoms of the Huber penalty of each atom's Euclidean error.
pub fn coord_loss(ctx: &mut Ctx<'_>, pred: Var, truth: &[Vec3], delta: f64) -> Var {
    let t = &mut ctx.tape;
    let tv = t.constant(points_to_tensor(truth));
    let d = t.sub(pred, tv);
    let h = t.huber_norm(d, delta);
    t.mean(h)
}

pub fn coord_loss_value(pred: &[Vec3], truth: &[Vec3], delta: f64) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, q)| crate::tape::huber(geom::dist(*p, *q), delta))
        .sum();
    s / pred.len() as f64
}

/// Row-major `n_l x n_p` distances between two point sets.
pub fn distance_matrix(a: &[Vec3], b: &[Vec3]) -> Vec<f64> {
    a.iter().flat_map(|p| b.iter().map(move |q| geom::dist(*p, *q))).collect()
}

/// Predicted-ligand to residue distances `[n_l * n_p, 1]`.
pub fn predicted_distances(ctx: &mut Ctx<'_>, x_l: Var, ca: &[Vec3]) -> Var {
    let n_l = ctx.value(x_l).rows;
    let n_p = ca.len();
    let rows: Arc<[usize]> = (0..n_l).flat_map(|i| std::iter::repeat(i).take(n_p)).collect();
    let tiled: Vec<Vec3> = (0..n_l).flat_map(|_| ca.iter().copied()).collect();
    let t = &mut ctx.tape;
    let xi = t.gather(x_l, &rows);
    let cj = t.constant(points_to_tensor(&tiled));
    let d = t.sub(xi, cj);
    let sq = t.square(d);
    let d2 = t.row_sum(sq);
    t.unary(d2, Unary::Sqrt)
}

/// `D̂ = MLP(z)` as `[n_l * n_p, 1]`.
pub fn decoded_distances(ctx: &mut Ctx<'_>, z: Var) -> Var {
    ctx.mlp("dock.dist_head", z)
}

/// `(Σ(D-D̃)² + Σ(D-D̂)² + γ_d Σ(D̃-D̂)²) / (n_l n_p)`.
pub fn distance_map_loss(ctx: &mut Ctx<'_>, d_true: &[f64], d_tilde: Var, d_hat: Var, gamma_d: f64) -> Var {
    let n = d_true.len();
    let t = &mut ctx.tape;
    let d = t.constant(Tensor::from_vec(n, 1, d_true.to_vec()));
    let mut sq = |a: Var, b: Var| {
        let e = t.sub(a, b);
        let e = t.square(e);
        t.sum(e)
    };
    let a = sq(d, d_tilde);
    let b = sq(d, d_hat);
    let c = sq(d_tilde, d_hat);
    let c = t.scale(c, gamma_d);
    let s = t.add(a, b);
    let s = t.add(s, c);
    t.scale(s, 1.0 / n as f64)
}

pub fn distance_map_loss_value(d: &[f64], d_tilde: &[f64], d_hat: &[f64], gamma_d: f64) -> f64 {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    (sq(d, d_tilde) + sq(d, d_hat) + gamma_d * sq(d_tilde, d_hat)) / d.len() as f64
}

pub fn docking_loss(ctx: &mut Ctx<'_>, coord: Var, dist: Var) -> Var {
    ctx.tape.add(coord, dist)
}
