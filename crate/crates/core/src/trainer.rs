//! Optimization, finite-difference gradient verification and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LossConfig, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{forward, noise_seed, ForwardOptions, LossTerms, LossVars, Model, PreparedComplex, Topology};
use crate::params::{Ctx, ParamStore};
use crate::tape::{Tensor, Var};

pub type Grads = BTreeMap<String, Tensor>;

/// `x_true` before epoch `t_p`, the prediction from then on.
pub fn use_true_center(epoch: usize, t_p: usize) -> bool {
    epoch < t_p
}

/// Loss terms and parameter gradients of the total loss for one complex.
pub fn complex_gradients(
    model: &Model,
    loss_cfg: &LossConfig,
    c: &PreparedComplex,
    opts: ForwardOptions,
) -> Result<(Grads, LossTerms)> {
    let mut ctx = Ctx::new(&model.params, true);
    let out = forward(
        &mut ctx,
        &model.config,
        loss_cfg,
        c,
        ForwardOptions {
            with_loss: true,
            ..opts
        },
    )?;
    let losses = out.losses.expect("losses requested");
    let terms = losses.values(&ctx);
    Ok((ctx.param_grads(losses.total), terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    m: ParamStore,
    v: ParamStore,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Decoupled weight decay followed by the bias-corrected moment step.
    /// Parameters without a gradient entry only decay.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let m = self.m.get_mut(name).expect("moment");
            let v = self.v.get_mut(name).expect("moment");
            let g = grads.get(name);
            for k in 0..p.data.len() {
                let gk = g.map_or(0.0, |g| g.data[k]);
                p.data[k] *= 1.0 - lr * cfg.weight_decay;
                m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
                v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub true_center: bool,
    pub batch: Vec<String>,
    /// Batch means.
    pub loss: LossTerms,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    /// Worker threads for per-complex gradients; results are reduced in
    /// batch order regardless.
    pub jobs: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<StepLog>,
}

fn batch_gradients(
    model: &Model,
    loss_cfg: &LossConfig,
    batch: &[&PreparedComplex],
    opts: &[ForwardOptions],
    jobs: usize,
) -> Vec<Result<(Grads, LossTerms)>> {
    if jobs <= 1 || batch.len() <= 1 {
        return batch
            .iter()
            .zip(opts)
            .map(|(c, o)| complex_gradients(model, loss_cfg, c, *o))
            .collect();
    }
    let mut out: Vec<Option<Result<(Grads, LossTerms)>>> = (0..batch.len()).map(|_| None).collect();
    let chunk = batch.len().div_ceil(jobs);
    std::thread::scope(|s| {
        for ((cs, os), slots) in batch.chunks(chunk).zip(opts.chunks(chunk)).zip(out.chunks_mut(chunk)) {
            s.spawn(move || {
                for ((c, o), slot) in cs.iter().zip(os).zip(slots) {
                    *slot = Some(complex_gradients(model, loss_cfg, c, *o));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("worker result")).collect()
}

fn mean_terms(terms: &[LossTerms]) -> LossTerms {
    let n = terms.len() as f64;
    let mut m = LossTerms::default();
    for t in terms {
        m.cls += t.cls / n;
        m.cen += t.cen / n;
        m.rad += t.rad / n;
        m.pocket += t.pocket / n;
        m.coord += t.coord / n;
        m.dist += t.dist / n;
        m.docking += t.docking / n;
        m.total += t.total / n;
    }
    m
}

/// Train from a fresh initialization seeded by `cfg.seed`.
pub fn train(
    cfg: &TrainConfig,
    data: &[PreparedComplex],
    opts: TrainOptions,
    on_step: impl FnMut(&StepLog, &Model),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::init(cfg.model.clone(), cfg.seed)?;
    train_from(model, cfg, data, opts, on_step)
}

pub fn train_from(
    mut model: Model,
    cfg: &TrainConfig,
    data: &[PreparedComplex],
    opts: TrainOptions,
    mut on_step: impl FnMut(&StepLog, &Model),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let trainable: Vec<&PreparedComplex> = data.iter().filter(|c| c.labels.is_some()).collect();
    for c in data.iter().filter(|c| c.labels.is_none()) {
        log::warn!("{}: untrainable, excluded", c.id);
    }
    if trainable.is_empty() {
        return Err(Error::Empty("no trainable complexes".into()));
    }
    let per_epoch = trainable.len().div_ceil(cfg.batch_size);
    let mut total = cfg.epochs * per_epoch;
    if let Some(m) = cfg.max_steps {
        total = total.min(m);
    }
    let t_p = cfg.t_p();
    let mut adam = AdamW::new(&model.params);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_DA7A);
    let mut log = Vec::with_capacity(total);
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..trainable.len()).collect();
        order.shuffle(&mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let batch: Vec<&PreparedComplex> = idx.iter().map(|&i| trainable[i]).collect();
            let true_center = use_true_center(epoch, t_p);
            let fopts: Vec<ForwardOptions> = idx
                .iter()
                .map(|&i| ForwardOptions {
                    use_true_center: true_center,
                    noise_seed: Some(noise_seed(cfg.seed, step as u64, i as u64)),
                    with_loss: true,
                })
                .collect();
            let lr = cfg.lr_at(step, total);
            let results = batch_gradients(&model, &cfg.loss, &batch, &fopts, opts.jobs);
            let mut grads: Option<Grads> = None;
            let mut terms = Vec::with_capacity(batch.len());
            let mut failure = None;
            let scale = 1.0 / batch.len() as f64;
            for (c, r) in batch.iter().zip(results) {
                match r {
                    Ok((g, t)) => {
                        terms.push(t);
                        let acc = grads.get_or_insert_with(Grads::new);
                        for (name, mut gt) in g {
                            gt.data.iter_mut().for_each(|v| *v *= scale);
                            match acc.get_mut(&name) {
                                Some(a) => a.add_assign(&gt),
                                None => {
                                    acc.insert(name, gt);
                                }
                            }
                        }
                    }
                    Err(Error::Divergence(msg)) => failure = Some(format!("{}: {msg}", c.id)),
                    Err(e) => return Err(e),
                }
            }
            let loss = mean_terms(&terms);
            let grads = grads.unwrap_or_default();
            let finite = failure.is_none() && loss.total.is_finite() && grads.values().all(Tensor::is_finite);
            if finite {
                adam.step(&mut model.params, &grads, lr, cfg);
            } else {
                log::warn!(
                    "step {step} rejected: loss {:?}, {}",
                    loss,
                    failure.as_deref().unwrap_or("non-finite gradient")
                );
            }
            let entry = StepLog {
                step,
                epoch,
                lr,
                true_center,
                batch: batch.iter().map(|c| c.id.clone()).collect(),
                loss,
                accepted: finite,
            };
            on_step(&entry, &model);
            log.push(entry);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, log })
}

// ---------------------------------------------------------------------------
// Gradient check

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Cls,
    Cen,
    Rad,
    Coord,
    Dist,
    Total,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [
        LossTerm::Cls,
        LossTerm::Cen,
        LossTerm::Rad,
        LossTerm::Coord,
        LossTerm::Dist,
        LossTerm::Total,
    ];

    fn var(self, l: &LossVars) -> Var {
        match self {
            LossTerm::Cls => l.cls,
            LossTerm::Cen => l.cen,
            LossTerm::Rad => l.rad,
            LossTerm::Coord => l.coord,
            LossTerm::Dist => l.dist,
            LossTerm::Total => l.total,
        }
    }

    fn value(self, t: &LossTerms) -> f64 {
        match self {
            LossTerm::Cls => t.cls,
            LossTerm::Cen => t.cen,
            LossTerm::Rad => t.rad,
            LossTerm::Coord => t.coord,
            LossTerm::Dist => t.dist,
            LossTerm::Total => t.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Roundoff in a loss evaluation, in units of `f64::EPSILON * |loss|`.
    /// Gradients too small for central differences to resolve within
    /// `tolerance` are compared against this noise level instead.
    pub noise_ulps: f64,
    pub per_block: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
            noise_ulps: 4.0,
            per_block: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: String,
    pub term: LossTerm,
    pub checked: usize,
    /// Coordinates whose perturbation changed pocket selection or contacts.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Coordinate attaining `max_rel_err`: tensor name, flat index,
    /// analytic and numeric derivative.
    pub worst: Option<(String, usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&BlockReport> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_err < self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        for b in other.blocks {
            match self.blocks.iter_mut().find(|x| x.block == b.block && x.term == b.term) {
                Some(x) => {
                    x.checked += b.checked;
                    x.skipped += b.skipped;
                    if b.max_rel_err > x.max_rel_err {
                        x.max_rel_err = b.max_rel_err;
                        x.worst = b.worst;
                    }
                }
                None => self.blocks.push(b),
            }
        }
    }
}

/// Parameter block of a tensor name: the name without its trailing
/// `.w`, `.b` or `.g`.
pub fn block_of(name: &str) -> &str {
    for suffix in [".w", ".b", ".g"] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s;
        }
    }
    name
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_with_topology(
    params: &ParamStore,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    c: &PreparedComplex,
    opts: ForwardOptions,
) -> Result<(LossTerms, Topology)> {
    let mut ctx = Ctx::new(params, false);
    let out = forward(&mut ctx, model_cfg, loss_cfg, c, opts)?;
    Ok((out.losses.expect("losses requested").values(&ctx), out.topology))
}

/// Fourth-order central difference: offsets in units of the step, weights.
const STENCIL: [(f64, f64); 4] = [(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)];

/// Compare analytic gradients of every term in `terms` with central
/// differences on a random subsample of each parameter block. `corrupt`
/// may modify the analytic gradients before comparison.
pub fn gradcheck(
    model: &Model,
    loss_cfg: &LossConfig,
    c: &PreparedComplex,
    opts: ForwardOptions,
    terms: &[LossTerm],
    gc: &GradCheckConfig,
    corrupt: Option<&dyn Fn(&str, &mut Tensor)>,
) -> Result<GradCheckReport> {
    if model.params.is_empty() {
        return Ok(GradCheckReport {
            tolerance: gc.tolerance,
            blocks: Vec::new(),
        });
    }
    let opts = ForwardOptions {
        with_loss: true,
        ..opts
    };
    let mut analytic: BTreeMap<LossTerm, Grads> = BTreeMap::new();
    let base_topology = {
        let mut ctx = Ctx::new(&model.params, true);
        let out = forward(&mut ctx, &model.config, loss_cfg, c, opts)?;
        let l = out.losses.expect("losses requested");
        for &t in terms {
            let mut g = ctx.param_grads(t.var(&l));
            if let Some(f) = corrupt {
                for (name, gt) in g.iter_mut() {
                    f(name, gt);
                }
            }
            analytic.insert(t, g);
        }
        out.topology
    };

    let mut blocks: BTreeMap<&str, Vec<(&String, usize)>> = BTreeMap::new();
    for (name, t) in model.params.iter() {
        let e = blocks.entry(block_of(name)).or_default();
        e.extend((0..t.len()).map(|k| (name, k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let mut params = model.params.clone();
    let mut report = GradCheckReport {
        tolerance: gc.tolerance,
        blocks: Vec::new(),
    };
    for (block, coords) in blocks {
        let picks = index::sample(&mut rng, coords.len(), gc.per_block.min(coords.len())).into_vec();
        let mut rows: Vec<BlockReport> = terms
            .iter()
            .map(|&t| BlockReport {
                block: block.to_string(),
                term: t,
                checked: 0,
                skipped: 0,
                max_rel_err: 0.0,
                worst: None,
            })
            .collect();
        for p in picks {
            let (name, k) = coords[p];
            let orig = params.get(name).expect("param").data[k];
            let mut evals = Vec::with_capacity(STENCIL.len());
            for &(off, _) in &STENCIL {
                params.get_mut(name).expect("param").data[k] = orig + off * gc.step;
                evals.push(eval_with_topology(&params, &model.config, loss_cfg, c, opts));
            }
            params.get_mut(name).expect("param").data[k] = orig;
            let mut values = Vec::with_capacity(evals.len());
            let mut unusable = false;
            for e in evals {
                match e {
                    Ok((l, t)) if t == base_topology => values.push(l),
                    Err(e @ (Error::Shape(_) | Error::Validation(_))) => return Err(e),
                    _ => unusable = true,
                }
            }
            if unusable {
                rows.iter_mut().for_each(|r| r.skipped += 1);
                continue;
            }
            for r in rows.iter_mut() {
                let v: Vec<f64> = values.iter().map(|l| r.term.value(l)).collect();
                let numeric = STENCIL.iter().zip(&v).map(|(&(_, w), x)| w * x).sum::<f64>() / gc.step;
                let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                let weight: f64 = STENCIL.iter().map(|&(_, w)| w.abs()).sum();
                let noise = gc.noise_ulps * f64::EPSILON * scale * weight / gc.step;
                let a = analytic[&r.term].get(name).map_or(0.0, |g| g.data[k]);
                let err = relative_error(a, numeric, gc.floor.max(noise / gc.tolerance));
                if err > r.max_rel_err || r.worst.is_none() {
                    r.max_rel_err = r.max_rel_err.max(err);
                    r.worst = Some((name.clone(), k, a, numeric));
                }
                r.checked += 1;
            }
        }
        report.blocks.extend(rows);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_FORMAT: &str = "curvebind-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: ParamStore,
}

pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        params: model.params.clone(),
    };
    crate::output::to_json(&ck, false)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

/// Parse a checkpoint; with `expected`, its configuration must equal that one.
pub fn checkpoint_from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model> {
    let header: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
    if header.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint("not a curvebind checkpoint".into()));
    }
    match header.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        v => {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {v:?}, expected {CHECKPOINT_VERSION}"
            )))
        }
    }
    let ck: Checkpoint =
        serde_json::from_value(header).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    let model = Model {
        config: ck.config,
        params: ck.params,
    };
    model.config.validate()?;
    model.check_shapes()?;
    if let Some(cfg) = expected {
        if cfg != &model.config {
            return Err(Error::Checkpoint(format!(
                "checkpoint configuration differs from the requested one: {}",
                config_diff(&model.config, cfg)
            )));
        }
    }
    Ok(model)
}

/// Top-level configuration keys whose values differ.
fn config_diff(a: &ModelConfig, b: &ModelConfig) -> String {
    let (Ok(serde_json::Value::Object(a)), Ok(serde_json::Value::Object(b))) =
        (serde_json::to_value(a), serde_json::to_value(b))
    else {
        return String::new();
    };
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Model> {
    checkpoint_from_bytes(&std::fs::read(path)?, expected)
}
