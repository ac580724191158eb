//! Experiment configuration: a TOML file per regime, plus the flag
//! overrides the train command applies on top. The merged result is what
//! the manifest snapshots.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use convqa::model::Hyper;
use convqa::sampling::{Schedule, ScheduleKind};
use convqa::trainer::{RegimeSpec, TrainerConfig};
use serde::{Deserialize, Serialize};

/// One experiment regime as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub name: String,
    pub total_epochs: u32,
    #[serde(default)]
    pub warmup_epochs: u32,
    #[serde(default)]
    pub from_best_model: bool,
    /// Checkpoint a from-best-model regime resumes from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
}

/// Schedule shape; the epoch count comes from `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Constant gold probability, read only by the constant-rate kind.
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub history_window: usize,
    pub max_span_len: usize,
    pub min_count: usize,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        let t = TrainerConfig::default();
        ModelConfig {
            embed_dim: t.embed_dim,
            hidden_dim: t.hidden_dim,
            history_window: t.history_window,
            max_span_len: t.max_span_len,
            min_count: t.min_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> OptimizerConfig {
        let h = Hyper::default();
        OptimizerConfig {
            learning_rate: h.learning_rate,
            beta1: h.beta1,
            beta2: h.beta2,
            epsilon: h.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    /// Base seed the three training streams are derived from.
    pub base: u64,
}

impl Default for SeedConfig {
    fn default() -> SeedConfig {
        SeedConfig { base: 0 }
    }
}

impl RegimeConfig {
    pub fn load(path: &Path) -> Result<RegimeConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RegimeConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.from_best_model && self.pretrained.is_none() {
            bail!(
                "regime {:?} resumes from a best model but names no pretrained checkpoint \
                 (set `pretrained` in the config or pass --pretrained)",
                self.name
            );
        }
        if !self.from_best_model && self.pretrained.is_some() {
            bail!(
                "regime {:?} names a pretrained checkpoint but from_best_model is false",
                self.name
            );
        }
        Ok(())
    }

    /// Builds the validated trainer-facing spec and config.
    pub fn to_spec(&self) -> Result<(RegimeSpec, TrainerConfig)> {
        let schedule = Schedule {
            kind: self.schedule.kind,
            c: self.schedule.c,
            n_epochs: self.total_epochs,
        };
        schedule.validate()?;
        let spec = RegimeSpec {
            name: self.name.clone(),
            total_epochs: self.total_epochs,
            warmup_epochs: self.warmup_epochs,
            from_best_model: self.from_best_model,
            schedule,
        };
        spec.validate()?;
        let trainer = TrainerConfig {
            history_window: self.model.history_window,
            max_span_len: self.model.max_span_len,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            min_count: self.model.min_count,
            hyper: Hyper {
                learning_rate: self.optimizer.learning_rate,
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                epsilon: self.optimizer.epsilon,
            },
        };
        Ok((spec, trainer))
    }
}
