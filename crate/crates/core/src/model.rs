//! The full two-stage model: pocket prediction followed by recycled pose
//! refinement inside the selected pocket.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LossConfig, ModelConfig};
use crate::curvature::graph_lcf;
use crate::docking::{self, points_to_tensor, tensor_to_points};
use crate::encoder::{self, opm_pair_embedding};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::molgraph::{build_ligand_graph, build_protein_graph, Graph};
use crate::net::{init_stack, stack_forward, EdgeList, GraphState, StackGraphs};
use crate::params::{Ctx, Init, ParamStore};
use crate::pocket::{self, PocketLabels};
use crate::structio::{ComplexRecord, EmbeddingTable};
use crate::tape::{Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
        };
        encoder::init_encoder(&mut init, &config);
        encoder::init_opm(&mut init, "pocket.opm_init", &config);
        init_stack(&mut init, "pocket", config.m1, &config);
        pocket::init_pocket_heads(&mut init, config.d_node);
        docking::init_docking(&mut init, &config);
        Ok(Self { config, params })
    }

    /// Parameter names and shapes a model with `config` declares.
    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<(String, (usize, usize))>> {
        let m = Self::init(config.clone(), 0)?;
        Ok(m.params.iter().map(|(k, t)| (k.clone(), t.shape())).collect())
    }

    /// Errors unless `params` has exactly the names and shapes of `config`.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = Self::expected_shapes(&self.config)?;
        if expected.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "config declares {} parameter tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            match self.params.get(&name) {
                None => return Err(Error::Shape(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape => {
                    return Err(Error::Shape(format!(
                        "{name}: expected {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                Some(t) if !t.is_finite() => {
                    return Err(Error::Validation(format!("{name} has non-finite entries")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Everything about a complex that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct PreparedComplex {
    pub id: String,
    pub ligand_graph: Graph,
    pub protein_graph: Graph,
    pub ligand_edges: EdgeList,
    pub protein_edges: EdgeList,
    /// `[n_l, 52 + 5]` and `[n_p, width + 5]`.
    pub ligand_features: Tensor,
    pub protein_features: Tensor,
    pub ca: Vec<Vec3>,
    pub conformer: Vec<Vec3>,
    /// Reference ligand coordinates from the document.
    pub truth: Vec<Vec3>,
    /// `None` when no residue is in contact with the ligand.
    pub labels: Option<PocketLabels>,
}

impl PreparedComplex {
    pub fn new(record: &ComplexRecord, cfg: &ModelConfig, table: Option<&EmbeddingTable>) -> Result<Self> {
        Self::with_ligand_features(record, cfg, table, None)
    }

    /// Like [`PreparedComplex::new`], with externally supplied `[n_l, 52]`
    /// ligand base features replacing the built-in featurizer.
    pub fn with_ligand_features(
        record: &ComplexRecord,
        cfg: &ModelConfig,
        table: Option<&EmbeddingTable>,
        ligand_base: Option<Tensor>,
    ) -> Result<Self> {
        record.validate()?;
        let ligand_graph = build_ligand_graph(record);
        let protein_graph = build_protein_graph(record, cfg.protein_cutoff);
        let use_lcf = !cfg.ablations.no_lcf;
        let lig_base = match ligand_base {
            Some(t) if t.shape() != (record.n_atoms(), encoder::LIGAND_BASE_WIDTH) => {
                return Err(Error::Shape(format!(
                    "ligand feature override is {:?}, expected ({}, {})",
                    t.shape(),
                    record.n_atoms(),
                    encoder::LIGAND_BASE_WIDTH
                )))
            }
            Some(t) => t,
            None => encoder::ligand_base_features(record, &ligand_graph),
        };
        let prot_base = encoder::protein_base_features(record, cfg.protein_mode, table)?;
        let ligand_features = encoder::concat_lcf(&lig_base, &graph_lcf(&ligand_graph)?, use_lcf)?;
        let protein_features = encoder::concat_lcf(&prot_base, &graph_lcf(&protein_graph)?, use_lcf)?;
        let labels = match pocket::ground_truth_labels(record) {
            Ok(l) => Some(l),
            Err(Error::Untrainable(msg)) => {
                log::warn!("{msg}");
                None
            }
            Err(e) => return Err(e),
        };
        let uniform = cfg.ablations.uniform_weights;
        Ok(Self {
            id: record.id.clone(),
            ligand_edges: EdgeList::from_graph(&ligand_graph, uniform),
            protein_edges: EdgeList::from_graph(&protein_graph, uniform),
            ligand_graph,
            protein_graph,
            ligand_features,
            protein_features,
            ca: record.ca_coords(),
            conformer: record.input_conformer(),
            truth: record.ligand_coords(),
            labels,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.truth.len()
    }

    pub fn n_residues(&self) -> usize {
        self.ca.len()
    }

    pub fn labels(&self) -> Result<&PocketLabels> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::Untrainable(self.id.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    /// Start docking from the ground-truth pocket center.
    pub use_true_center: bool,
    /// Seed of the Gumbel noise stream; `None` disables noise.
    pub noise_seed: Option<u64>,
    /// Build the loss terms (requires labels).
    pub with_loss: bool,
}

/// Discrete choices made during a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub selected: Vec<usize>,
    pub cross: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub cls: Var,
    pub cen: Var,
    pub rad: Var,
    pub pocket: Var,
    pub coord: Var,
    pub dist: Var,
    pub docking: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cls: f64,
    pub cen: f64,
    pub rad: f64,
    pub pocket: f64,
    pub coord: f64,
    pub dist: f64,
    pub docking: f64,
    pub total: f64,
}

impl LossVars {
    pub fn values(&self, ctx: &Ctx<'_>) -> LossTerms {
        let v = |x: Var| ctx.value(x).item();
        LossTerms {
            cls: v(self.cls),
            cen: v(self.cen),
            rad: v(self.rad),
            pocket: v(self.pocket),
            coord: v(self.coord),
            dist: v(self.dist),
            docking: v(self.docking),
            total: v(self.total),
        }
    }
}

pub struct Forward {
    pub pose: Var,
    pub probs: Vec<f64>,
    pub center: Vec3,
    pub r_hat: f64,
    pub radius_final: f64,
    /// Center the docking stage started from.
    pub dock_center: Vec3,
    pub initial_pose: Vec<Vec3>,
    pub trace: Vec<Vec<Vec3>>,
    pub topology: Topology,
    pub losses: Option<LossVars>,
}

/// Deterministic per-complex noise seed.
pub fn noise_seed(seed: u64, step: u64, index: u64) -> u64 {
    let mut x = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^ (x >> 33)
}

fn row_vec(ctx: &Ctx<'_>, v: Var) -> Vec3 {
    let t = ctx.value(v);
    [t.data[0], t.data[1], t.data[2]]
}

pub fn forward(
    ctx: &mut Ctx<'_>,
    cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    c: &PreparedComplex,
    opts: ForwardOptions,
) -> Result<Forward> {
    let labels = if opts.with_loss || opts.use_true_center {
        Some(c.labels()?)
    } else {
        None
    };
    let feats = encoder::assemble_node_features(ctx, &c.ligand_features, &c.protein_features)?;
    let ca_t = points_to_tensor(&c.ca);

    // Pocket stage: ligand placed at the protein centroid.
    let start = docking::init_pose(&c.conformer, geom::centroid(&c.ca));
    let x_l = ctx.constant(points_to_tensor(&start));
    let x_p = ctx.constant(ca_t.clone());
    let z = opm_pair_embedding(ctx, "pocket.opm_init", feats.ligand, feats.protein);
    let state = GraphState {
        h_l: feats.ligand,
        h_p: feats.protein,
        x_l,
        x_p,
        z,
    };
    let graphs = StackGraphs {
        ligand: &c.ligand_edges,
        protein: &c.protein_edges,
    };
    let (pstate, pocket_cross) = stack_forward(ctx, "pocket", cfg.m1, state, &graphs, cfg);
    let logits = pocket::classify_residues(ctx, pstate.h_p);
    let probs_v = ctx.tape.sigmoid(logits);
    let noise = opts.noise_seed.map(|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        pocket::gumbel_noise(&mut rng, c.n_residues())
    });
    let weights = pocket::gumbel_weights_var(ctx, logits, cfg.gumbel_tau, noise.as_deref());
    let center_v = pocket::pocket_center_var(ctx, weights, &ca_t)?;
    let r_hat_v = pocket::radius_head(ctx, pstate.h_l);
    let r_hat = ctx.value(r_hat_v).item();
    let fixed = cfg.ablations.fixed_radius.then_some(cfg.fixed_radius_value);
    let radius_final = pocket::final_radius(r_hat, c.n_atoms(), fixed);
    let center = row_vec(ctx, center_v);

    // Docking stage.
    let dock_center_v = match (opts.use_true_center, labels) {
        (true, Some(l)) => ctx.constant(Tensor::from_vec(1, 3, l.true_center.to_vec())),
        _ => center_v,
    };
    let dock_center = row_vec(ctx, dock_center_v);
    let selected = pocket::select_pocket(&c.ca, dock_center, radius_final, cfg.pocket_fallback_k);
    let sel_idx = pocket::index_arc(&selected);
    let ca_sel: Vec<Vec3> = selected.iter().map(|&j| c.ca[j]).collect();
    let sub_graph = c.protein_graph.induced(&selected);
    let sub_edges = EdgeList::from_graph(&sub_graph, cfg.ablations.uniform_weights);
    let h_p = ctx.tape.gather(pstate.h_p, &sel_idx);
    let x_p = ctx.constant(points_to_tensor(&ca_sel));
    let x_l = docking::init_pose_var(ctx, &c.conformer, dock_center_v);
    let initial_pose = tensor_to_points(ctx.value(x_l));
    let z = opm_pair_embedding(ctx, "dock.opm_init", pstate.h_l, h_p);
    let state = GraphState {
        h_l: pstate.h_l,
        h_p,
        x_l,
        x_p,
        z,
    };
    let graphs = StackGraphs {
        ligand: &c.ligand_edges,
        protein: &sub_edges,
    };
    let refined = docking::refine(ctx, state, &graphs, cfg)?;
    let pose = refined.state.x_l;

    let losses = match (opts.with_loss, labels) {
        (true, Some(l)) => {
            let (gamma, weight) = if cfg.ablations.plain_bce {
                (0.0, 1.0)
            } else {
                (loss_cfg.gamma, pocket::balance_weight(&l.y))
            };
            let cls = pocket::focal_loss(ctx, probs_v, &l.y, gamma, weight, loss_cfg.prob_eps);
            let cen = pocket::huber_loss(ctx, center_v, &l.true_center, loss_cfg.huber_delta);
            let rad = pocket::huber_loss(ctx, r_hat_v, &[l.true_radius], loss_cfg.huber_delta);
            let pocket_l = pocket::pocket_loss(ctx, cls, cen, rad, loss_cfg.alpha1);
            let coord = docking::coord_loss(ctx, pose, &c.truth, loss_cfg.huber_delta);
            let d_true = docking::distance_matrix(&c.truth, &ca_sel);
            let d_tilde = docking::predicted_distances(ctx, pose, &ca_sel);
            let d_hat = docking::decoded_distances(ctx, refined.state.z);
            let dist = docking::distance_map_loss(ctx, &d_true, d_tilde, d_hat, loss_cfg.gamma_d);
            let dock_l = docking::docking_loss(ctx, coord, dist);
            let total = ctx.tape.add(pocket_l, dock_l);
            Some(LossVars {
                cls,
                cen,
                rad,
                pocket: pocket_l,
                coord,
                dist,
                docking: dock_l,
                total,
            })
        }
        _ => None,
    };

    let cross = pocket_cross
        .iter()
        .chain(&refined.cross)
        .map(|x| x.pairs.clone())
        .collect();
    Ok(Forward {
        pose,
        probs: ctx.value(probs_v).data.clone(),
        center,
        r_hat,
        radius_final,
        dock_center,
        initial_pose,
        trace: refined.trace.iter().map(tensor_to_points).collect(),
        topology: Topology { selected, cross },
        losses,
    })
}

/// Inference-mode prediction (no noise, predicted center, no tape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pose: Vec<Vec3>,
    pub probs: Vec<f64>,
    pub center: Vec3,
    pub r_hat: f64,
    pub radius_final: f64,
    pub selected: Vec<usize>,
    pub initial_pose: Vec<Vec3>,
    pub trace: Vec<Vec<Vec3>>,
}

pub fn predict(model: &Model, c: &PreparedComplex) -> Result<Prediction> {
    let mut ctx = Ctx::new(&model.params, false);
    let out = forward(
        &mut ctx,
        &model.config,
        &LossConfig::default(),
        c,
        ForwardOptions::default(),
    )?;
    Ok(Prediction {
        id: c.id.clone(),
        pose: tensor_to_points(ctx.value(out.pose)),
        probs: out.probs,
        center: out.center,
        r_hat: out.r_hat,
        radius_final: out.radius_final,
        selected: out.topology.selected,
        initial_pose: out.initial_pose,
        trace: out.trace,
    })
}

/// Loss terms of one complex without building gradients.
pub fn evaluate_losses(
    model: &Model,
    loss_cfg: &LossConfig,
    c: &PreparedComplex,
    opts: ForwardOptions,
) -> Result<LossTerms> {
    let mut ctx = Ctx::new(&model.params, false);
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
    Ok(out.losses.expect("losses requested").values(&ctx))
}
