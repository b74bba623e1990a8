use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, ValueEnum};
use curvebind::curvature::graph_lcf;
use curvebind::geom::{self, Vec3};
use curvebind::metrics::{self, MetricReport};
use curvebind::model::{self, ForwardOptions, Model, PreparedComplex};
use curvebind::molgraph::{self, ComplexGraph, Graph};
use curvebind::structio::{self, apply_filters, count_contacts, FilterDecision, FilterPolicy};
use curvebind::synth::{self, MicroSpec};
use curvebind::tape::Tensor;
use curvebind::trainer::{self, GradCheckConfig, GradCheckReport, LossTerm, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::inputs::{self, DroppedEntry, ErrorEntry, Index, KeptEntry, INDEX_FILE, INDEX_SCHEMA};
use crate::manifest::{write_json, write_text, Run};
use crate::settings::{FeatureArgs, ModelArgs, Preset};
use crate::{GlobalArgs, GradcheckFailed};

// ---------------------------------------------------------------------------
// ingest

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Complex documents or directories of documents.
    pub paths: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// JSON or TOML filter thresholds.
    #[arg(long)]
    pub filter_policy: Option<PathBuf>,
}

fn load_policy(path: Option<&Path>) -> Result<FilterPolicy> {
    let Some(p) = path else {
        return Ok(FilterPolicy::default());
    };
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let policy: FilterPolicy = if p.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| curvebind::Error::Format(format!("{}: {e}", p.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| curvebind::Error::Format(format!("{}: {e}", p.display())))?
    };
    policy.validate()?;
    Ok(policy)
}

pub fn ingest(g: &GlobalArgs, a: &IngestArgs, argv: &[String]) -> Result<()> {
    let policy = load_policy(a.filter_policy.as_deref())?;
    let mut run = Run::start("ingest", g, argv, &a.paths, &policy, g.seed.unwrap_or(0), &a.out)?;
    let mut errors = Vec::new();
    let mut files = Vec::new();
    for p in &a.paths {
        if p.is_dir() {
            match inputs::list_documents(p) {
                Ok(f) => files.extend(f),
                Err(e) => errors.push(ErrorEntry {
                    source: p.display().to_string(),
                    error: format!("{e:#}"),
                }),
            }
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        log::warn!("no complex documents found");
    }
    let parsed: Vec<_> = run.stage("parse", || {
        files
            .par_iter()
            .map(|f| (f, structio::read_complex(f)))
            .collect()
    });
    let docs = a.out.join("complexes");
    std::fs::create_dir_all(&docs).with_context(|| format!("creating {}", docs.display()))?;
    let mut index = Index {
        schema: INDEX_SCHEMA.into(),
        policy,
        kept: Vec::new(),
        dropped: Vec::new(),
        errors,
    };
    let mut stems = BTreeMap::new();
    run.stage("filter", || -> Result<()> {
        for (f, r) in parsed {
            let source = f.display().to_string();
            let record = match r {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{source}: {e}");
                    index.errors.push(ErrorEntry { source, error: e.to_string() });
                    continue;
                }
            };
            let stem = inputs::file_stem(&record.id);
            if let Some(first) = stems.get(&stem) {
                index.errors.push(ErrorEntry {
                    source,
                    error: format!("complex id `{}` collides with {first}", record.id),
                });
                continue;
            }
            match apply_filters(&record, &policy) {
                FilterDecision::Drop(reason) => index.dropped.push(DroppedEntry {
                    id: record.id.clone(),
                    source: source.clone(),
                    reason,
                }),
                FilterDecision::Keep => {
                    let rel = format!("complexes/{stem}.json");
                    write_text(&a.out.join(&rel), &structio::to_json_string(&record))?;
                    index.kept.push(KeptEntry {
                        id: record.id.clone(),
                        path: rel,
                        source: source.clone(),
                        n_atoms: record.n_atoms(),
                        n_residues: record.n_residues(),
                        contacts: count_contacts(&record, policy.contact_cutoff),
                    });
                }
            }
            stems.insert(stem, source);
        }
        Ok(())
    })?;
    write_json(&a.out.join(INDEX_FILE), &index)?;
    log::info!(
        "kept {}, dropped {}, errors {}",
        index.kept.len(),
        index.dropped.len(),
        index.errors.len()
    );
    run.finish()
}

// ---------------------------------------------------------------------------
// curvature

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["graph", "complex"])))]
pub struct CurvatureArgs {
    /// Graph file: JSON (`coords` or `n_nodes` plus `edges`) or text
    /// (`nodes N` then one `u v` pair per line).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Complex document; writes `ligand.tsv` and `protein.tsv`.
    #[arg(long)]
    pub complex: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = molgraph::PROTEIN_EDGE_CUTOFF)]
    pub protein_cutoff: f64,
}

/// Edge section (`u v kappa`), a blank line, then the node section.
pub fn curvature_tsv(graph: &Graph) -> curvebind::Result<String> {
    let kappa = curvebind::curvature::graph_curvature(graph)?;
    let lcf = graph_lcf(graph)?;
    let mut edges: Vec<((usize, usize), f64)> = kappa.iter().collect();
    edges.sort_by_key(|e| e.0);
    let mut out = String::from("u\tv\tkappa\n");
    for ((u, v), k) in edges {
        out.push_str(&format!("{u}\t{v}\t{}\n", metrics::format_f64(k)));
    }
    out.push_str("\nnode\tlcf_min\tlcf_max\tlcf_mean\tlcf_std\tlcf_median\n");
    for (v, l) in lcf.iter().enumerate() {
        let vals: Vec<String> = l.0.iter().map(|x| metrics::format_f64(*x)).collect();
        out.push_str(&format!("{v}\t{}\n", vals.join("\t")));
    }
    Ok(out)
}

pub fn curvature(g: &GlobalArgs, a: &CurvatureArgs, argv: &[String]) -> Result<()> {
    let input = a.graph.clone().or_else(|| a.complex.clone()).expect("clap group");
    let settings = serde_json::json!({ "protein_cutoff": a.protein_cutoff });
    let mut run = Run::start("curvature", g, argv, &[input.clone()], &settings, g.seed.unwrap_or(0), &a.out)?;
    if let Some(p) = &a.graph {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let graph = molgraph::parse_graph(&text).with_context(|| format!("parsing {}", p.display()))?;
        let tsv = run.stage("curvature", || curvature_tsv(&graph))?;
        write_text(&a.out.join("graph.tsv"), &tsv)?;
    } else {
        let record = structio::read_complex(&input).with_context(|| format!("reading {}", input.display()))?;
        let lig = molgraph::build_ligand_graph(&record);
        let prot = molgraph::build_protein_graph(&record, a.protein_cutoff);
        let (l, p) = run.stage("curvature", || -> curvebind::Result<_> {
            Ok((curvature_tsv(&lig)?, curvature_tsv(&prot)?))
        })?;
        write_text(&a.out.join("ligand.tsv"), &l)?;
        write_text(&a.out.join("protein.tsv"), &p)?;
    }
    run.finish()
}

// ---------------------------------------------------------------------------
// featurize

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// Complex documents, directories, or an ingest index.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Serialize)]
struct Matrix<'a> {
    rows: usize,
    cols: usize,
    data: Vec<&'a [f64]>,
}

impl<'a> Matrix<'a> {
    fn new(t: &'a Tensor) -> Self {
        Self {
            rows: t.rows,
            cols: t.cols,
            data: t.data.chunks(t.cols.max(1)).collect(),
        }
    }
}

pub fn featurize(g: &GlobalArgs, a: &FeaturizeArgs, argv: &[String]) -> Result<()> {
    let cfg = a.model.train_config(Preset::Desk)?;
    let mut run = Run::start("featurize", g, argv, &a.inputs, &cfg.model, g.seed.unwrap_or(cfg.seed), &a.out)?;
    let records = run.stage("read", || inputs::load_records(&a.inputs))?;
    let prepared = run.stage("featurize", || a.features.prepare(&records, &cfg.model))?;
    for c in &prepared {
        let doc = serde_json::json!({
            "id": c.id,
            "ligand": Matrix::new(&c.ligand_features),
            "protein": Matrix::new(&c.protein_features),
        });
        write_json(&a.out.join(format!("{}.features.json", inputs::file_stem(&c.id))), &doc)?;
    }
    run.finish()
}

// ---------------------------------------------------------------------------
// train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Complex documents, directories, or an ingest index.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch from which docking uses the predicted pocket center.
    #[arg(long)]
    pub t_p: Option<usize>,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

pub fn train(g: &GlobalArgs, a: &TrainArgs, argv: &[String]) -> Result<()> {
    let mut cfg = a.model.train_config(Preset::Desk)?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if a.t_p.is_some() {
        cfg.t_p = a.t_p;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut run = Run::start("train", g, argv, &a.inputs, &cfg, cfg.seed, &a.out)?;
    let records = run.stage("read", || inputs::load_records(&a.inputs))?;
    let data = run.stage("featurize", || a.features.prepare(&records, &cfg.model))?;
    let opts = TrainOptions { jobs: g.effective_jobs() };
    let outcome = run.stage("train", || -> Result<_> {
        match &a.init {
            Some(p) => {
                let m = trainer::load_checkpoint(p, Some(&cfg.model)).with_context(|| format!("loading {}", p.display()))?;
                Ok(trainer::train_from(m, &cfg, &data, opts, |_, _| {})?)
            }
            None => Ok(trainer::train(&cfg, &data, opts, |_, _| {})?),
        }
    })?;
    let mut log = Vec::new();
    for entry in &outcome.log {
        log.extend(curvebind::output::to_json(entry, false)?);
    }
    std::fs::write(run.out().join("train_log.jsonl"), log).context("writing train_log.jsonl")?;
    write_json(&run.out().join("config.json"), &cfg)?;
    trainer::save_checkpoint(&outcome.model, &run.out().join("checkpoint.json"))?;
    if let Some(last) = outcome.log.last() {
        log::info!("{} steps, final batch loss {}", outcome.log.len(), last.loss.total);
    }
    run.finish()
}

// ---------------------------------------------------------------------------
// dock

#[derive(Args, Debug)]
pub struct DockArgs {
    /// Complex documents, directories, or an ingest index.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Expected model configuration; a checkpoint that differs is rejected.
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Include the pose after every refinement layer.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseEntry {
    pub id: String,
    pub elements: Vec<String>,
    pub pose: Vec<Vec3>,
    pub initial_pose: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Vec<Vec3>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFile {
    pub poses: Vec<PoseEntry>,
}

#[derive(Debug, Clone, Serialize)]
struct LabelDiagnostics {
    n_positive: usize,
    true_center: Vec3,
    true_radius: f64,
    center_error: f64,
    /// Fraction of residues whose thresholded probability matches the label.
    accuracy: f64,
    /// Fraction of positive residues inside the selected pocket.
    pocket_recall: f64,
}

#[derive(Debug, Clone, Serialize)]
struct PocketReport {
    id: String,
    probabilities: Vec<f64>,
    center: Vec3,
    r_hat: f64,
    radius_final: f64,
    selected: Vec<usize>,
    selected_types: Vec<String>,
    labels: Option<LabelDiagnostics>,
}

pub fn dock(g: &GlobalArgs, a: &DockArgs, argv: &[String]) -> Result<()> {
    let expected = if a.model.is_explicit() {
        Some(a.model.train_config(Preset::Desk)?.model)
    } else {
        None
    };
    let model = trainer::load_checkpoint(&a.checkpoint, expected.as_ref())
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut inputs_all = a.inputs.clone();
    inputs_all.push(a.checkpoint.clone());
    let ck_hash = crate::manifest::sha256_hex(&std::fs::read(&a.checkpoint)?);
    let settings = serde_json::json!({ "checkpoint_sha256": ck_hash, "trace": a.trace });
    let mut run = Run::start("dock", g, argv, &inputs_all, &settings, g.seed.unwrap_or(0), &a.out)?;
    let records = run.stage("read", || inputs::load_records(&a.inputs))?;
    let data = run.stage("featurize", || a.features.prepare(&records, &model.config))?;
    let predictions = run.stage("dock", || -> curvebind::Result<Vec<_>> {
        data.par_iter().map(|c| model::predict(&model, c)).collect()
    })?;
    let mut poses = Vec::new();
    let mut pockets = Vec::new();
    for (((_, rec), c), p) in records.iter().zip(&data).zip(predictions) {
        let labels = c.labels.as_ref().map(|l| {
            let hits = p
                .probs
                .iter()
                .zip(&l.y)
                .filter(|(q, y)| (**q > 0.5) == (**y > 0.5))
                .count();
            let in_pocket = p.selected.iter().filter(|&&j| l.y[j] > 0.5).count();
            LabelDiagnostics {
                n_positive: l.n_positive(),
                true_center: l.true_center,
                true_radius: l.true_radius,
                center_error: geom::dist(p.center, l.true_center),
                accuracy: hits as f64 / l.y.len() as f64,
                pocket_recall: in_pocket as f64 / l.n_positive().max(1) as f64,
            }
        });
        pockets.push(PocketReport {
            id: p.id.clone(),
            probabilities: p.probs.clone(),
            center: p.center,
            r_hat: p.r_hat,
            radius_final: p.radius_final,
            selected_types: p.selected.iter().map(|&j| rec.residues[j].residue_type.clone()).collect(),
            selected: p.selected.clone(),
            labels,
        });
        poses.push(PoseEntry {
            id: p.id,
            elements: rec.ligand_atoms.iter().map(|x| x.element.clone()).collect(),
            pose: p.pose,
            initial_pose: p.initial_pose,
            trace: a.trace.then_some(p.trace),
        });
    }
    write_json(&a.out.join("poses.json"), &PoseFile { poses })?;
    write_json(&a.out.join("pockets.json"), &serde_json::json!({ "pockets": pockets }))?;
    run.finish()
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// `poses.json` written by `dock`.
    #[arg(long)]
    pub poses: PathBuf,
    /// Reference complexes: documents, directories, or an ingest index.
    #[arg(required = true)]
    pub truth: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Row label in the metric table.
    #[arg(long, default_value = "curvebind")]
    pub method: String,
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs, argv: &[String]) -> Result<()> {
    let mut inputs_all = vec![a.poses.clone()];
    inputs_all.extend(a.truth.iter().cloned());
    let settings = serde_json::json!({ "method": a.method });
    let mut run = Run::start("eval", g, argv, &inputs_all, &settings, g.seed.unwrap_or(0), &a.out)?;
    let bytes = std::fs::read(&a.poses).with_context(|| format!("reading {}", a.poses.display()))?;
    let poses: PoseFile = serde_json::from_slice(&bytes)
        .map_err(|e| curvebind::Error::Format(format!("{}: {e}", a.poses.display())))?;
    let records = run.stage("read", || inputs::load_records(&a.truth))?;
    let truth: BTreeMap<&str, Vec<Vec3>> = records.iter().map(|(_, r)| (r.id.as_str(), r.ligand_coords())).collect();
    let mut pairs = Vec::new();
    for p in &poses.poses {
        let t = truth
            .get(p.id.as_str())
            .ok_or_else(|| curvebind::Error::Validation(format!("no reference complex for pose `{}`", p.id)))?;
        pairs.push((p.id.as_str(), p.pose.as_slice(), t.as_slice()));
    }
    if truth.len() > pairs.len() {
        log::warn!("{} reference complexes have no pose", truth.len() - pairs.len());
    }
    let report = run.stage("metrics", || MetricReport::from_poses(pairs))?;
    write_text(&a.out.join("metrics.tsv"), &report.to_tsv(&a.method))?;
    write_json(&a.out.join("metrics.json"), &report)?;
    run.finish()
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TermArg {
    Cls,
    Cen,
    Rad,
    Coord,
    Dist,
    Total,
}

impl From<TermArg> for LossTerm {
    fn from(t: TermArg) -> Self {
        match t {
            TermArg::Cls => LossTerm::Cls,
            TermArg::Cen => LossTerm::Cen,
            TermArg::Rad => LossTerm::Rad,
            TermArg::Coord => LossTerm::Coord,
            TermArg::Dist => LossTerm::Dist,
            TermArg::Total => LossTerm::Total,
        }
    }
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Complexes to check on; synthetic micro complexes when empty.
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Number of synthetic instances.
    #[arg(long, default_value_t = 3)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Sampled coordinates per parameter block.
    #[arg(long, default_value_t = 50)]
    pub per_block: usize,
    /// Loss terms to check [default: all].
    #[arg(long, value_enum, value_delimiter = ',')]
    pub terms: Vec<TermArg>,
}

#[derive(Serialize)]
struct GradcheckOutput {
    passed: bool,
    instances: Vec<(String, GradCheckReport)>,
    merged: GradCheckReport,
}

pub fn gradcheck(g: &GlobalArgs, a: &GradcheckArgs, argv: &[String]) -> Result<()> {
    let cfg = a.model.train_config(Preset::Tiny)?;
    let seed = g.seed.unwrap_or(cfg.seed);
    let gc = GradCheckConfig {
        step: a.step,
        tolerance: a.tolerance,
        per_block: a.per_block,
        seed,
        ..GradCheckConfig::default()
    };
    let terms: Vec<LossTerm> = if a.terms.is_empty() {
        LossTerm::ALL.to_vec()
    } else {
        a.terms.iter().map(|&t| t.into()).collect()
    };
    let settings = serde_json::json!({ "config": cfg, "gradcheck": gc, "terms": terms, "instances": a.instances });
    let mut run = Run::start("gradcheck", g, argv, &a.inputs, &settings, seed, &a.out)?;
    let data: Vec<PreparedComplex> = if a.inputs.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synth::micro_set(&mut rng, a.instances, &MicroSpec::default())
            .iter()
            .map(|r| PreparedComplex::new(r, &cfg.model, None))
            .collect::<curvebind::Result<_>>()?
    } else {
        let records = inputs::load_records(&a.inputs)?;
        a.features.prepare(&records, &cfg.model)?
    };
    let reports = run.stage("gradcheck", || -> Result<Vec<_>> {
        data.par_iter()
            .enumerate()
            .map(|(i, c)| {
                let m = Model::init(cfg.model.clone(), seed.wrapping_add(i as u64))?;
                let opts = ForwardOptions {
                    use_true_center: i % 2 == 0,
                    noise_seed: Some(model::noise_seed(seed, 0, i as u64)),
                    with_loss: true,
                };
                let r = trainer::gradcheck(&m, &cfg.loss, c, opts, &terms, &gc, None)
                    .with_context(|| format!("gradcheck on {}", c.id))?;
                Ok((c.id.clone(), r))
            })
            .collect()
    })?;
    let mut merged = GradCheckReport {
        tolerance: gc.tolerance,
        blocks: Vec::new(),
    };
    for (_, r) in &reports {
        merged.merge(r.clone());
    }
    let failures = merged.failures().len();
    write_json(
        &a.out.join("gradcheck.json"),
        &GradcheckOutput {
            passed: failures == 0,
            instances: reports,
            merged,
        },
    )?;
    run.finish()?;
    if failures > 0 {
        bail!(GradcheckFailed(failures));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// dump-graph

#[derive(Args, Debug)]
pub struct DumpGraphArgs {
    /// Complex documents, directories, or an ingest index.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = molgraph::PROTEIN_EDGE_CUTOFF)]
    pub protein_cutoff: f64,
    #[arg(long, default_value_t = molgraph::CROSS_EDGE_CUTOFF)]
    pub cross_cutoff: f64,
}

pub fn dump_graph(g: &GlobalArgs, a: &DumpGraphArgs, argv: &[String]) -> Result<()> {
    let settings = serde_json::json!({ "protein_cutoff": a.protein_cutoff, "cross_cutoff": a.cross_cutoff });
    let mut run = Run::start("dump-graph", g, argv, &a.inputs, &settings, g.seed.unwrap_or(0), &a.out)?;
    let records = run.stage("read", || inputs::load_records(&a.inputs))?;
    for (_, r) in &records {
        let graph = ComplexGraph::build(r, a.protein_cutoff, a.cross_cutoff);
        write_json(&a.out.join(format!("{}.graph.json", inputs::file_stem(&r.id))), &graph.to_json())?;
    }
    run.finish()
}

