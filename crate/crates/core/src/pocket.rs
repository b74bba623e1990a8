//! Pocket prediction: residue labels, the classifier, balanced focal loss,
//! Gumbel-softmax center, dynamic radius and pocket selection.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::params::{Ctx, Init};
use crate::structio::ComplexRecord;
use crate::tape::{huber, Tensor, Unary, Var};

/// Residues whose Cα is strictly closer than this to any ligand atom are
/// pocket residues.
pub const LABEL_CUTOFF: f64 = 10.0;

/// Output gain of the radius head, so an untrained model predicts r̂ ≈ 0
/// and the pocket radius starts near √n_l.
const RADIUS_INIT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocketLabels {
    pub y: Vec<f64>,
    pub true_center: Vec3,
    pub true_radius: f64,
}

impl PocketLabels {
    pub fn n_positive(&self) -> usize {
        self.y.iter().filter(|&&v| v > 0.5).count()
    }
}

pub fn ground_truth_labels(record: &ComplexRecord) -> Result<PocketLabels> {
    let atoms = record.ligand_coords();
    let c2 = LABEL_CUTOFF * LABEL_CUTOFF;
    let y: Vec<f64> = record
        .residues
        .iter()
        .map(|r| atoms.iter().any(|a| geom::dist2(*a, r.ca) < c2) as u8 as f64)
        .collect();
    let positives: Vec<Vec3> = record
        .residues
        .iter()
        .zip(&y)
        .filter(|(_, &v)| v > 0.5)
        .map(|(r, _)| r.ca)
        .collect();
    if positives.is_empty() {
        return Err(Error::Untrainable(format!("{}: no residue within {LABEL_CUTOFF} Å of the ligand", record.id)));
    }
    let true_center = geom::centroid(&positives);
    let true_radius = atoms.iter().map(|a| geom::dist(*a, true_center)).fold(0.0, f64::max);
    Ok(PocketLabels {
        y,
        true_center,
        true_radius,
    })
}

pub fn init_pocket_heads<R: Rng>(init: &mut Init<'_, R>, d_node: usize) {
    init.linear("pocket.cls", d_node, 1, 1.0);
    init.mlp("pocket.radius", d_node, 1, RADIUS_INIT_GAIN);
}

/// Per-residue logits `[n_p, 1]` from an affine head.
pub fn classify_residues(ctx: &mut Ctx<'_>, h_p: Var) -> Var {
    ctx.linear("pocket.cls", h_p)
}

/// Reference evaluation of the per-complex focal loss
/// `weight * Σ_j -[y (1-p)^γ ln p + (1-y) p^γ ln(1-p)]`.
pub fn focal_loss_value(probs: &[f64], y: &[f64], gamma: f64, weight: f64, eps: f64) -> f64 {
    let s: f64 = probs
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * (1.0 - p).powf(gamma) * p.ln() + (1.0 - y) * p.powf(gamma) * (1.0 - p).ln())
        })
        .sum();
    weight * s
}

/// `total residues / pocket residues` (Inf-free: requires a positive).
pub fn balance_weight(y: &[f64]) -> f64 {
    let pos = y.iter().filter(|&&v| v > 0.5).count();
    y.len() as f64 / pos as f64
}

/// Per-complex focal loss on the tape; `probs` is `[n,1]`.
pub fn focal_loss(ctx: &mut Ctx<'_>, probs: Var, y: &[f64], gamma: f64, weight: f64, eps: f64) -> Var {
    let n = y.len();
    let t = &mut ctx.tape;
    let p = t.unary(probs, Unary::Clamp(eps, 1.0 - eps));
    let q = t.scale(p, -1.0);
    let q = t.add_const(q, 1.0);
    let ln_p = t.ln(p);
    let ln_q = t.ln(q);
    let fp = t.unary(q, Unary::Pow(gamma));
    let fq = t.unary(p, Unary::Pow(gamma));
    let pos = t.mul(fp, ln_p);
    let neg = t.mul(fq, ln_q);
    let yv = t.constant(Tensor::from_vec(n, 1, y.to_vec()));
    let ny = t.constant(Tensor::from_vec(n, 1, y.iter().map(|v| 1.0 - v).collect()));
    let a = t.mul(pos, yv);
    let b = t.mul(neg, ny);
    let s = t.add(a, b);
    let s = t.sum(s);
    t.scale(s, -weight)
}

/// Standard Gumbel noise `-ln(-ln U)`.
pub fn gumbel_noise<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Reference `softmax((logits + noise) / τ)`.
pub fn gumbel_weights(logits: &[f64], tau: f64, noise: Option<&[f64]>) -> Vec<f64> {
    let mut w: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(k, l)| (l + noise.map_or(0.0, |g| g[k])) / tau)
        .collect();
    crate::tape::softmax_in_place(&mut w);
    w
}

/// Gumbel-softmax weights `[n,1]` on the tape.
pub fn gumbel_weights_var(ctx: &mut Ctx<'_>, logits: Var, tau: f64, noise: Option<&[f64]>) -> Var {
    let n = ctx.value(logits).rows;
    let t = &mut ctx.tape;
    let mut l = logits;
    if let Some(g) = noise {
        let g = t.constant(Tensor::from_vec(n, 1, g.to_vec()));
        l = t.add(l, g);
    }
    let l = t.scale(l, 1.0 / tau);
    let row = t.reshape(l, 1, n);
    let w = t.row_softmax(row);
    t.reshape(w, n, 1)
}

/// Reference normalized weighted mean of Cα positions.
pub fn pocket_center(weights: &[f64], ca: &[Vec3]) -> Result<Vec3> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights("pocket weights sum to zero".into()));
    }
    let mut c = [0.0; 3];
    for (w, x) in weights.iter().zip(ca) {
        for k in 0..3 {
            c[k] += w * x[k];
        }
    }
    Ok(geom::scale(c, 1.0 / total))
}

/// `Σ_j w_j x_j / Σ_j w_j` as a `[1,3]` node.
pub fn pocket_center_var(ctx: &mut Ctx<'_>, weights: Var, ca: &Tensor) -> Result<Var> {
    if !(ctx.value(weights).data.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateWeights("pocket weights sum to zero".into()));
    }
    let t = &mut ctx.tape;
    let x = t.constant(ca.clone());
    let wx = t.mul_col(x, weights);
    let num = t.col_sum(wx);
    let den = t.sum(weights);
    let inv = t.unary(den, Unary::Recip);
    Ok(t.mul_scalar(num, inv))
}

/// Huber penalty of the Euclidean norm of `pred - target` (`[1,k]` each).
pub fn huber_loss(ctx: &mut Ctx<'_>, pred: Var, target: &[f64], delta: f64) -> Var {
    let t = &mut ctx.tape;
    let tv = t.constant(Tensor::from_vec(1, target.len(), target.to_vec()));
    let d = t.sub(pred, tv);
    let h = t.huber_norm(d, delta);
    t.sum(h)
}

/// Reference Huber value for an error norm `e`.
pub fn huber_value(e: f64, delta: f64) -> f64 {
    huber(e, delta)
}

/// `r̂ = φ_r(Σ_i h_i)` as a `[1,1]` node.
pub fn radius_head(ctx: &mut Ctx<'_>, h_l: Var) -> Var {
    let s = ctx.tape.col_sum(h_l);
    ctx.mlp("pocket.radius", s)
}

/// `r̂ + √n_l`, or the fixed value under the ablation.
pub fn final_radius(r_hat: f64, n_l: usize, fixed: Option<f64>) -> f64 {
    match fixed {
        Some(r) => r,
        None => r_hat + (n_l as f64).sqrt(),
    }
}

pub fn pocket_loss_value(cls: f64, cen: f64, rad: f64, alpha1: f64) -> f64 {
    cls + cen + alpha1 * rad
}

pub fn pocket_loss(ctx: &mut Ctx<'_>, cls: Var, cen: Var, rad: Var, alpha1: f64) -> Var {
    let t = &mut ctx.tape;
    let r = t.scale(rad, alpha1);
    let a = t.add(cls, cen);
    t.add(a, r)
}

/// Residues with `|ca - center| <= radius`, ascending. When fewer than `k`
/// qualify (including none) the set is padded with the next nearest
/// residues up to `min(k, n)`; ties are broken by index.
pub fn select_pocket(ca: &[Vec3], center: Vec3, radius: f64, k: usize) -> Vec<usize> {
    let inside: Vec<usize> = (0..ca.len())
        .filter(|&j| geom::dist(ca[j], center) <= radius)
        .collect();
    if inside.len() >= k.min(ca.len()) {
        return inside;
    }
    let mut order: Vec<usize> = (0..ca.len()).collect();
    order.sort_by(|&a, &b| {
        geom::dist2(ca[a], center)
            .total_cmp(&geom::dist2(ca[b], center))
            .then(a.cmp(&b))
    });
    order.truncate(k.min(ca.len()));
    order.sort_unstable();
    order
}

pub fn index_arc(idx: &[usize]) -> Arc<[usize]> {
    idx.iter().copied().collect()
}
