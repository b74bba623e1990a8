//! Model, loss and training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source of per-residue base features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ProteinMode {
    /// Rows looked up in an embedding table by `embedding_key`.
    Precomputed { width: usize },
    /// Amino-acid one-hot plus five physicochemical scalars.
    Fallback,
}

impl ProteinMode {
    pub fn width(self) -> usize {
        match self {
            ProteinMode::Precomputed { width } => width,
            ProteinMode::Fallback => crate::encoder::PROTEIN_FALLBACK_WIDTH,
        }
    }
}

/// Switches that each disable one mechanism.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Replace curvature features with zeros.
    pub no_lcf: bool,
    /// Uniform neighbour weights instead of degree weights.
    pub uniform_weights: bool,
    /// Constant pocket radius instead of `r̂ + √n`.
    pub fixed_radius: bool,
    /// Unweighted binary cross-entropy instead of the balanced focal loss.
    pub plain_bce: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_node: usize,
    pub d_pair: usize,
    pub d_opm: usize,
    pub heads: usize,
    /// Layers in the pocket stage.
    pub m1: usize,
    /// Layers in the docking stack.
    pub m2: usize,
    /// Passes through the docking stack (shared parameters).
    pub recycles: usize,
    pub protein_mode: ProteinMode,
    pub freeze_protein: bool,
    pub protein_cutoff: f64,
    pub cross_cutoff: f64,
    pub gumbel_tau: f64,
    pub fixed_radius_value: f64,
    pub pocket_fallback_k: usize,
    /// Output gain of the final layer of every coordinate gate.
    pub gate_init_gain: f64,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_node: 512,
            d_pair: 128,
            d_opm: 32,
            heads: 4,
            m1: 1,
            m2: 4,
            recycles: 8,
            protein_mode: ProteinMode::Fallback,
            freeze_protein: true,
            protein_cutoff: crate::molgraph::PROTEIN_EDGE_CUTOFF,
            cross_cutoff: crate::molgraph::CROSS_EDGE_CUTOFF,
            gumbel_tau: 1.0,
            fixed_radius_value: 20.0,
            pocket_fallback_k: 8,
            gate_init_gain: 1e-3,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    /// Small widths suited to CPU training on toy data.
    pub fn desk() -> Self {
        Self {
            d_node: 64,
            d_pair: 16,
            d_opm: 8,
            ..Self::default()
        }
    }

    /// Tiny widths and depth for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            d_node: 8,
            d_pair: 4,
            d_opm: 2,
            heads: 2,
            m1: 1,
            m2: 2,
            recycles: 2,
            gate_init_gain: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_node", self.d_node),
            ("d_pair", self.d_pair),
            ("d_opm", self.d_opm),
            ("heads", self.heads),
            ("m1", self.m1),
            ("m2", self.m2),
            ("recycles", self.recycles),
            ("protein width", self.protein_mode.width()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be at least 1")));
            }
        }
        if self.d_node % self.heads != 0 {
            return Err(Error::Validation(format!(
                "d_node {} is not divisible by {} heads",
                self.d_node, self.heads
            )));
        }
        for (name, v) in [
            ("protein_cutoff", self.protein_cutoff),
            ("cross_cutoff", self.cross_cutoff),
            ("gumbel_tau", self.gumbel_tau),
            ("fixed_radius_value", self.fixed_radius_value),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha1: f64,
    pub gamma: f64,
    pub gamma_d: f64,
    pub huber_delta: f64,
    pub prob_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.05,
            gamma: 2.0,
            gamma_d: 1.0,
            huber_delta: 1.0,
            prob_eps: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Schedule {
    Constant,
    /// Hold the base rate for `hold_frac` of all steps, then decay linearly
    /// to `final_factor` times the base rate.
    HoldThenLinear { hold_frac: f64, final_factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch from which the docking stage uses the predicted pocket center;
    /// `None` means half of `epochs`.
    pub t_p: Option<usize>,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            learning_rate: 5e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 3,
            epochs: 450,
            t_p: None,
            max_steps: None,
            schedule: Schedule::HoldThenLinear {
                hold_frac: 0.5,
                final_factor: 0.1,
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn t_p(&self) -> usize {
        self.t_p.unwrap_or(self.epochs / 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Validation(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if self.t_p() > self.epochs {
            return Err(Error::Validation(format!(
                "t_p {} exceeds epochs {}",
                self.t_p(),
                self.epochs
            )));
        }
        if !(self.loss.huber_delta > 0.0) {
            return Err(Error::Validation("huber_delta must be positive".into()));
        }
        if let Schedule::HoldThenLinear { hold_frac, final_factor } = self.schedule {
            if !(0.0..=1.0).contains(&hold_frac) || !(final_factor >= 0.0) {
                return Err(Error::Validation("invalid schedule parameters".into()));
            }
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::HoldThenLinear { hold_frac, final_factor } => {
                let hold = (hold_frac * total as f64).floor() as usize;
                if step < hold || total <= hold + 1 {
                    self.learning_rate
                } else {
                    let t = (step - hold) as f64 / (total - hold - 1) as f64;
                    self.learning_rate * (1.0 + (final_factor - 1.0) * t.min(1.0))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(TrainConfig::default().t_p(), 225);
    }

    #[test]
    fn rejects_bad_heads() {
        let c = ModelConfig {
            d_node: 10,
            heads: 4,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn schedule_shape() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0, 100), 5e-5);
        assert_eq!(c.lr_at(49, 100), 5e-5);
        assert!((c.lr_at(99, 100) - 5e-6).abs() < 1e-18);
        let k = TrainConfig {
            schedule: Schedule::Constant,
            ..TrainConfig::default()
        };
        assert_eq!(k.lr_at(99, 100), 5e-5);
    }

    #[test]
    fn toml_like_round_trip() {
        let c = TrainConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
