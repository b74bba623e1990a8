use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use curvebind::config::{ModelConfig, TrainConfig};
use curvebind::encoder;
use curvebind::model::PreparedComplex;
use curvebind::structio::{ComplexRecord, EmbeddingTable};
use curvebind::tape::Tensor;
use rayon::prelude::*;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full widths (512/128).
    Default,
    /// Reduced widths for CPU training.
    Desk,
    /// Minimal widths and depth, used for gradient checks.
    Tiny,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Default => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Built-in model configuration [default: desk; tiny for gradcheck].
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// TOML or JSON file with training options and `model`, `loss` and
    /// `encoder` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Zero the curvature feature columns.
    #[arg(long)]
    pub no_lcf: bool,
    /// Uniform neighbour weights in message passing.
    #[arg(long)]
    pub uniform_weights: bool,
    /// Constant pocket radius.
    #[arg(long)]
    pub fixed_radius: bool,
    /// Unweighted binary cross-entropy for pocket classification.
    #[arg(long)]
    pub plain_bce: bool,
}

impl ModelArgs {
    /// Whether anything about the model was requested explicitly.
    pub fn is_explicit(&self) -> bool {
        self.preset.is_some()
            || self.config.is_some()
            || self.no_lcf
            || self.uniform_weights
            || self.fixed_radius
            || self.plain_bce
    }

    pub fn train_config(&self, fallback: Preset) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config_file(p)?,
            None => TrainConfig {
                model: self.preset.unwrap_or(fallback).model(),
                ..TrainConfig::default()
            },
        };
        let a = &mut cfg.model.ablations;
        a.no_lcf |= self.no_lcf;
        a.uniform_weights |= self.uniform_weights;
        a.fixed_radius |= self.fixed_radius;
        a.plain_bce |= self.plain_bce;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Map the `encoder` table onto the model configuration.
fn apply_encoder_keys(root: &mut Map<String, Value>, encoder: Value) -> Result<()> {
    let Value::Object(enc) = encoder else {
        bail!(curvebind::Error::Validation("`encoder` must be a table".into()));
    };
    let model = root
        .entry("model")
        .or_insert_with(|| Value::Object(Map::new()))
        .as_object_mut()
        .ok_or_else(|| curvebind::Error::Validation("`model` must be a table".into()))?;
    for (k, v) in enc {
        match k.as_str() {
            "d_node" | "d_pair" => {
                model.insert(k, v);
            }
            "use_lcf" => {
                let on = v
                    .as_bool()
                    .ok_or_else(|| curvebind::Error::Validation("encoder.use_lcf must be a boolean".into()))?;
                let abl = model
                    .entry("ablations")
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .ok_or_else(|| curvebind::Error::Validation("`model.ablations` must be a table".into()))?;
                abl.insert("no_lcf".into(), Value::Bool(!on));
            }
            "protein_mode" => {
                let v = match v {
                    Value::String(kind) => serde_json::json!({ "kind": kind }),
                    other => other,
                };
                model.insert(k, v);
            }
            other => bail!(curvebind::Error::Validation(format!("unknown key encoder.{other}"))),
        }
    }
    Ok(())
}

pub fn load_config_file(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: Value = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        let t: toml::Value = toml::from_str(&text)
            .map_err(|e| curvebind::Error::Format(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t)?
    } else {
        serde_json::from_str(&text).map_err(|e| curvebind::Error::Format(format!("{}: {e}", path.display())))?
    };
    let Value::Object(root) = &mut value else {
        bail!(curvebind::Error::Format(format!("{}: expected a table", path.display())));
    };
    if let Some(enc) = root.remove("encoder") {
        apply_encoder_keys(root, enc)?;
    }
    serde_json::from_value(value)
        .map_err(|e| curvebind::Error::Validation(format!("{}: {e}", path.display())).into())
}

#[derive(Args, Debug, Clone, Default)]
pub struct FeatureArgs {
    /// Residue embeddings: a TSV table, a binary matrix file keyed by its
    /// stem, or a directory of binary files.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Directory of `<id>.tsv` files (atom index followed by 52 values)
    /// replacing the built-in ligand atom features.
    #[arg(long)]
    pub ligand_features: Option<PathBuf>,
}

fn stem(p: &Path) -> Result<&str> {
    p.file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow::anyhow!("{}: file name is not valid UTF-8", p.display()))
}

impl FeatureArgs {
    pub fn embeddings(&self) -> Result<Option<EmbeddingTable>> {
        let Some(path) = &self.embeddings else {
            return Ok(None);
        };
        let read = |p: &Path| std::fs::read(p).with_context(|| format!("reading {}", p.display()));
        let mut table = EmbeddingTable::new();
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .with_context(|| format!("reading {}", path.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| p.extension().and_then(|e| e.to_str()) == Some("bin"));
            files.sort();
            for f in files {
                table.add_binary(stem(&f)?, &read(&f)?)?;
            }
        } else if path.extension().and_then(|e| e.to_str()) == Some("bin") {
            table.add_binary(stem(path)?, &read(path)?)?;
        } else {
            table = EmbeddingTable::from_tsv(&read(path)?)?;
        }
        Ok(Some(table))
    }

    pub fn ligand_override(&self, record: &ComplexRecord) -> Result<Option<Tensor>> {
        let Some(dir) = &self.ligand_features else {
            return Ok(None);
        };
        let f = dir.join(format!("{}.tsv", crate::inputs::file_stem(&record.id)));
        if !f.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let t = encoder::ligand_features_from_tsv(&text, record.n_atoms())
            .with_context(|| format!("ligand features {}", f.display()))?;
        Ok(Some(t))
    }

    /// Prepare records in parallel, keeping input order.
    pub fn prepare(&self, records: &[(PathBuf, ComplexRecord)], cfg: &ModelConfig) -> Result<Vec<PreparedComplex>> {
        let table = self.embeddings()?;
        records
            .par_iter()
            .map(|(p, r)| {
                let lig = self.ligand_override(r)?;
                PreparedComplex::with_ligand_features(r, cfg, table.as_ref(), lig)
                    .with_context(|| format!("preparing {}", p.display()))
            })
            .collect()
    }
}
