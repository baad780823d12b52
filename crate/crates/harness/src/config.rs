//! Run configuration: a sectioned TOML file plus `section.key=value`
//! overrides from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use illumrl_core::agent::AgentConfig;
use illumrl_core::training::{DecisionMapping, RewardSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ILLUMRL_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the four MNIST IDX files.
    pub mnist_dir: PathBuf,
    /// Directory holding `train.vistack` and `test.vistack`; empty means
    /// the output directory.
    pub stacks: PathBuf,
    /// Use at most this many training samples (0 = all).
    pub train_limit: usize,
    /// Share of the training file held out for checkpoint selection.
    pub validation_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            mnist_dir: PathBuf::from("data/mnist"),
            stacks: PathBuf::new(),
            train_limit: 0,
            validation_fraction: 0.1,
        }
    }
}

/// Architecture and rollout settings. Stack depth, image size and class
/// count come from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub decision_hidden: usize,
    pub t_max: usize,
    pub policy_stddev: f64,
    pub readout_sigma: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::mnist();
        Self {
            encoder_hidden: a.encoder_hidden,
            embed_dim: a.embed_dim,
            hidden_dim: a.hidden_dim,
            decision_hidden: a.decision_hidden,
            t_max: a.t_max,
            policy_stddev: a.policy_stddev,
            readout_sigma: a.readout_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub r_stay: f64,
    pub r_exit: f64,
    pub mapping: String,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub seed: u64,
    /// Seed of the readout noise during evaluation.
    pub eval_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            r_stay: t.reward.r_stay,
            r_exit: t.reward.r_exit,
            mapping: t.mapping.name().to_string(),
            clip_norm: t.clip_norm,
            eval_every: t.eval_every,
            seed: 0,
            eval_seed: 1_000_003,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub r_exit: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Also train the single-capture baseline for every seed.
    pub baseline: bool,
    /// Run independent (point, seed) jobs concurrently.
    pub parallel: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            r_exit: vec![1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01],
            seeds: vec![0, 1, 2],
            baseline: true,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub agent: AgentSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config(self.train.seed, self.train.r_exit, false)?;
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            bail!("data.validation_fraction must lie in [0, 1), got {}", self.data.validation_fraction);
        }
        if self.sweep.seeds.is_empty() || self.sweep.r_exit.is_empty() {
            bail!("sweep needs at least one seed and one r_exit value");
        }
        for &r in &self.sweep.r_exit {
            RewardSpec::new(self.train.r_stay, r)?;
        }
        Ok(())
    }

    pub fn mapping(&self) -> Result<DecisionMapping> {
        Ok(DecisionMapping::from_name(&self.train.mapping)?)
    }

    pub fn train_config(&self, seed: u64, r_exit: f64, baseline: bool) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            reward: RewardSpec::new(t.r_stay, r_exit)?,
            seed,
            eval_every: t.eval_every,
            baseline,
            clip_norm: t.clip_norm,
            mapping: self.mapping()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Agent layout for stacks of `n_pattern` slices of `image_dims` pixels.
    pub fn agent_config(&self, n_pattern: usize, image_dims: (usize, usize), n_classes: usize) -> Result<AgentConfig> {
        let a = &self.agent;
        let cfg = AgentConfig {
            n_pattern,
            image_dims,
            encoder_hidden: a.encoder_hidden,
            embed_dim: a.embed_dim,
            hidden_dim: a.hidden_dim,
            decision_hidden: a.decision_hidden,
            n_classes,
            t_max: a.t_max,
            policy_stddev: a.policy_stddev,
            readout_sigma: a.readout_sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Directory of the stack files for output directory `out`.
    pub fn stacks_dir(&self, out: &Path) -> PathBuf {
        if self.data.stacks.as_os_str().is_empty() {
            out.to_path_buf()
        } else {
            self.data.stacks.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Applies `section.key=value`. The value is read as a TOML literal and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not key=value"))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .with_context(|| format!("override key {key:?} is not section.key"))?;
    let raw = value.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let Some(sec) = entry.as_table_mut() else {
        bail!("{section} is not a section");
    };
    sec.insert(field.to_string(), value);
    Ok(())
}
