//! Experiment configuration: a flat TOML file resolved against
//! per-environment defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::EnvName;
use crate::error::{MeeeError, Result};
use crate::model::ModelLoss;
use crate::nn::Activation;

/// Which parts of the method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Optimistic exploration and uncertainty-weighted updates.
    Meee,
    /// Weighted updates only.
    MeeeV1,
    /// Optimistic exploration only.
    MeeeV2,
    /// Plain model-based baseline: neither.
    Mbpo,
    /// Model-free: no ensemble, no rollouts.
    Sac,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Meee, Variant::MeeeV1, Variant::MeeeV2, Variant::Mbpo, Variant::Sac];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Meee => "meee",
            Variant::MeeeV1 => "meee_v1",
            Variant::MeeeV2 => "meee_v2",
            Variant::Mbpo => "mbpo",
            Variant::Sac => "sac",
        }
    }

    pub fn uses_model(self) -> bool {
        self != Variant::Sac
    }

    pub fn explores(self) -> bool {
        matches!(self, Variant::Meee | Variant::MeeeV2)
    }

    pub fn weights_updates(self) -> bool {
        matches!(self, Variant::Meee | Variant::MeeeV1)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = MeeeError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| MeeeError::Config(format!("unknown variant {s:?}")))
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env_name: EnvName,
    pub variant: Variant,
    pub seed: u64,
    pub n_epochs: usize,
    pub steps_per_epoch: usize,
    /// Real steps taken with uniformly random actions before any learning.
    pub warmup_steps: usize,
    pub model_rollouts_per_step: usize,
    pub rollout_horizon: usize,
    /// Horizon reached at the last epoch; equal to `rollout_horizon` for a
    /// fixed horizon, larger for a linear schedule.
    pub rollout_horizon_final: usize,
    pub gradient_updates_per_step: usize,
    pub ensemble_size: usize,
    pub k_candidates: usize,
    pub include_base: bool,
    pub lambda: f64,
    pub psi: Vec<f64>,
    pub weight_temperature: f64,
    pub include_reward_in_variance: bool,
    pub gamma: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    pub polyak: f64,
    pub single_critic: bool,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub model_lr: f64,
    pub model_loss: ModelLoss,
    pub activation: Activation,
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub model_hidden_size: usize,
    pub model_hidden_layers: usize,
    pub batch_size: usize,
    pub model_batch_size: usize,
    pub model_train_epochs: usize,
    pub env_buffer_capacity: usize,
    pub model_buffer_capacity: usize,
    /// Fraction of each agent minibatch drawn from real transitions.
    pub real_data_fraction: f64,
    pub eval_episodes: usize,
    /// Real steps between evaluations.
    pub eval_interval: usize,
    pub parallel: bool,
    /// Whether the metrics CSV records elapsed time. Off keeps the CSV a
    /// pure function of the config.
    pub record_wall_clock: bool,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Documented defaults for one environment.
    pub fn defaults(env_name: EnvName) -> Self {
        let (n_epochs, steps_per_epoch, horizon, action_dim) = match env_name {
            EnvName::Lqr => (30, 200, 1, 2),
            EnvName::Pendulum => (50, 400, 5, 1),
        };
        let rollouts = 10;
        Self {
            env_name,
            variant: Variant::Meee,
            seed: 0,
            n_epochs,
            steps_per_epoch,
            warmup_steps: steps_per_epoch,
            model_rollouts_per_step: rollouts,
            rollout_horizon: horizon,
            rollout_horizon_final: horizon,
            gradient_updates_per_step: 10,
            ensemble_size: 7,
            k_candidates: 8,
            include_base: true,
            lambda: 1.0,
            psi: vec![1.0; action_dim],
            weight_temperature: 20.0,
            include_reward_in_variance: true,
            gamma: 0.99,
            alpha: 0.2,
            auto_alpha: false,
            polyak: 0.995,
            single_critic: false,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            model_lr: 1e-3,
            model_loss: ModelLoss::Mse,
            activation: Activation::Relu,
            hidden_size: 64,
            hidden_layers: 2,
            model_hidden_size: 64,
            model_hidden_layers: 2,
            batch_size: 128,
            model_batch_size: 64,
            model_train_epochs: 5,
            env_buffer_capacity: n_epochs * steps_per_epoch,
            model_buffer_capacity: rollouts * horizon * steps_per_epoch,
            real_data_fraction: 0.05,
            eval_episodes: 5,
            eval_interval: steps_per_epoch,
            parallel: false,
            record_wall_clock: false,
            out_dir: PathBuf::from("runs"),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.env_name {
            EnvName::Lqr => 2,
            EnvName::Pendulum => 1,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.n_epochs * self.steps_per_epoch
    }

    /// Rollout horizon for `epoch`, interpolated linearly from
    /// `rollout_horizon` to `rollout_horizon_final`.
    pub fn horizon_at(&self, epoch: usize) -> usize {
        if self.rollout_horizon_final == self.rollout_horizon || self.n_epochs <= 1 {
            return self.rollout_horizon;
        }
        let frac = epoch.min(self.n_epochs - 1) as f64 / (self.n_epochs - 1) as f64;
        let span = self.rollout_horizon_final as f64 - self.rollout_horizon as f64;
        (self.rollout_horizon as f64 + frac * span).round() as usize
    }

    /// First violated constraint as `(key, message)`.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        fn need(ok: bool, key: &'static str, msg: &str) -> std::result::Result<(), (&'static str, String)> {
            if ok {
                Ok(())
            } else {
                Err((key, msg.to_string()))
            }
        }
        let pos = |x: usize| x >= 1;
        let unit_open = |x: f64| x > 0.0 && x.is_finite();
        need(pos(self.n_epochs), "n_epochs", "must be >= 1")?;
        need(pos(self.steps_per_epoch), "steps_per_epoch", "must be >= 1")?;
        need(pos(self.model_rollouts_per_step), "model_rollouts_per_step", "must be >= 1")?;
        need(pos(self.rollout_horizon), "rollout_horizon", "must be >= 1")?;
        need(
            self.rollout_horizon_final >= self.rollout_horizon,
            "rollout_horizon_final",
            "must be >= rollout_horizon",
        )?;
        need(pos(self.gradient_updates_per_step), "gradient_updates_per_step", "must be >= 1")?;
        need(self.ensemble_size >= 2, "ensemble_size", "must be >= 2")?;
        need(
            self.k_candidates >= 1 || self.include_base,
            "k_candidates",
            "must be >= 1 when include_base is false",
        )?;
        need(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda", "must be >= 0")?;
        need(
            self.psi.len() == self.action_dim(),
            "psi",
            &format!("needs one entry per action dimension ({})", self.action_dim()),
        )?;
        need(self.psi.iter().all(|&p| unit_open(p)), "psi", "entries must be > 0")?;
        need(unit_open(self.weight_temperature), "weight_temperature", "must be > 0")?;
        need((0.0..1.0).contains(&self.gamma), "gamma", "must lie in [0, 1)")?;
        need(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha", "must be >= 0")?;
        need((0.0..=1.0).contains(&self.polyak), "polyak", "must lie in [0, 1]")?;
        need(unit_open(self.actor_lr), "actor_lr", "must be > 0")?;
        need(unit_open(self.critic_lr), "critic_lr", "must be > 0")?;
        need(unit_open(self.alpha_lr), "alpha_lr", "must be > 0")?;
        need(unit_open(self.model_lr), "model_lr", "must be > 0")?;
        need(pos(self.hidden_size), "hidden_size", "must be >= 1")?;
        need(pos(self.hidden_layers), "hidden_layers", "must be >= 1")?;
        need(pos(self.model_hidden_size), "model_hidden_size", "must be >= 1")?;
        need(pos(self.model_hidden_layers), "model_hidden_layers", "must be >= 1")?;
        need(pos(self.batch_size), "batch_size", "must be >= 1")?;
        need(pos(self.model_batch_size), "model_batch_size", "must be >= 1")?;
        need(pos(self.model_train_epochs), "model_train_epochs", "must be >= 1")?;
        need(pos(self.env_buffer_capacity), "env_buffer_capacity", "must be >= 1")?;
        need(pos(self.model_buffer_capacity), "model_buffer_capacity", "must be >= 1")?;
        need(
            (0.0..=1.0).contains(&self.real_data_fraction),
            "real_data_fraction",
            "must lie in [0, 1]",
        )?;
        need(pos(self.eval_episodes), "eval_episodes", "must be >= 1")?;
        need(pos(self.eval_interval), "eval_interval", "must be >= 1")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(key, msg)| MeeeError::Config(format!("key `{key}`: {msg}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MeeeError::Config(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_toml()?)?)
    }
}

/// Key-value overrides applied on top of a config file, e.g. from the
/// command line.
pub type Overrides = toml::Table;

/// 1-based line on which `key` is assigned in `source`, if any.
fn line_of(source: &str, key: &str) -> Option<usize> {
    source.lines().position(|line| {
        line.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn located(source: &str, key: &str, msg: &str) -> MeeeError {
    match line_of(source, key) {
        Some(line) => MeeeError::Config(format!("line {line}, key `{key}`: {msg}")),
        None => MeeeError::Config(format!("key `{key}`: {msg}")),
    }
}

/// Parses config text, fills unspecified keys with the defaults of the
/// selected environment (`lqr` when absent) and validates the result.
pub fn parse_config(source: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut table: toml::Table = source
        .parse()
        .map_err(|e: toml::de::Error| MeeeError::Config(e.to_string().trim_end().to_string()))?;
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    let env_name = match table.get("env_name") {
        None => EnvName::Lqr,
        Some(toml::Value::String(s)) => s.parse().map_err(|e: MeeeError| located(source, "env_name", &e.to_string()))?,
        Some(_) => return Err(located(source, "env_name", "expected a string")),
    };
    let defaults = toml::Table::try_from(ExperimentConfig::defaults(env_name))
        .map_err(|e| MeeeError::Config(e.to_string()))?;
    for key in table.keys() {
        if !defaults.contains_key(key) {
            return Err(located(source, key, "unknown key"));
        }
    }
    let mut merged = defaults;
    for (k, v) in table {
        // integers are accepted where reals are expected
        let v = match (&merged[&k], v) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::Array(_), toml::Value::Array(items)) => toml::Value::Array(
                items
                    .into_iter()
                    .map(|x| match x {
                        toml::Value::Integer(i) => toml::Value::Float(i as f64),
                        other => other,
                    })
                    .collect(),
            ),
            (_, v) => v,
        };
        let expected = merged[&k].type_str();
        if v.type_str() != expected {
            return Err(located(source, &k, &format!("expected {expected}, found {}", v.type_str())));
        }
        merged.insert(k, v);
    }
    let config: ExperimentConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| MeeeError::Config(e.message().to_string()))?;
    config.check().map_err(|(key, msg)| located(source, key, &msg))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_config_with(path, &Overrides::new())
}

pub fn load_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| MeeeError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&source, overrides)
        .map_err(|e| MeeeError::Config(format!("{}: {}", path.display(), strip_prefix(e))))
}

fn strip_prefix(e: MeeeError) -> String {
    match e {
        MeeeError::Config(msg) => msg,
        other => other.to_string(),
    }
}
