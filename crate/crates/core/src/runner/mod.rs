//! The outer training loop: act, store, imagine, update, evaluate.

mod config;
mod eval;
mod metrics;

use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

pub use config::{load_config, load_config_with, parse_config, ExperimentConfig, Overrides, Variant};
pub use eval::{episode_returns, evaluate_policy, DeterministicPolicy, FnPolicy};
pub use metrics::{read_metrics, steps_to_threshold, write_metrics, MetricsRow, METRICS_HEADER};

use crate::buffer::{EnvBuffer, ModelBuffer};
use crate::checkpoint::{save_ensemble, save_policy};
use crate::env::{BuiltinEnv, Environment, Transition};
use crate::error::{MeeeError, Result};
use crate::explore::{select_action, ExplorationParams};
use crate::model::{Ensemble, EnsembleConfig};
use crate::random::{derive_seed, rng_from_seed, SimRng};
use crate::rollout::{generate_rollouts, RolloutParams};
use crate::sac::{CriticPair, GaussianPolicy, SacAgent, SacConfig};
use crate::scalar::Scalar;

/// Consecutive failed agent updates after which a run is abandoned.
pub const MAX_CONSECUTIVE_FAILURES: usize = 100;

/// Independent random streams, all derived from the master seed.
struct Streams {
    env: SimRng,
    act: SimRng,
    model: SimRng,
    rollout: SimRng,
    batch: SimRng,
    update: SimRng,
    eval_seed: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let s = |name| rng_from_seed(derive_seed(seed, name));
        Self {
            env: s("env"),
            act: s("act"),
            model: s("model"),
            rollout: s("rollout"),
            batch: s("batch"),
            update: s("update"),
            eval_seed: derive_seed(seed, "eval"),
        }
    }
}

/// Everything a finished (or stopped) run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub rows: Vec<MetricsRow>,
    pub policy: GaussianPolicy<T>,
    pub ensemble: Option<Ensemble<T>>,
    pub env_buffer: EnvBuffer<T>,
    pub model_buffer: ModelBuffer<T>,
    pub total_env_steps: usize,
    pub eval_env_steps: usize,
    pub failed_updates: usize,
    /// Smallest and largest weight consumed by any agent update.
    pub weight_range: Option<(f64, f64)>,
    pub stopped_early: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    final_eval_return_mean: Option<f64>,
    final_eval_return_std: Option<f64>,
    best_eval_return_mean: Option<f64>,
    total_env_steps: usize,
    eval_env_steps: usize,
    failed_updates: usize,
    stopped_early: bool,
    wall_clock_seconds: f64,
}

/// Runs the experiment and writes `metrics.csv`, `summary.json`,
/// `config.toml`, `policy.ckpt` and (with a model) `ensemble.ckpt` into
/// `config.out_dir`.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig) -> Result<RunOutcome<T>> {
    run_experiment_with(config, |_| ControlFlow::Continue(()))
}

/// [`run_experiment`] with a hook called on every metrics row; returning
/// `Break` ends training after that evaluation.
pub fn run_experiment_with<T: Scalar>(
    config: &ExperimentConfig,
    on_row: impl FnMut(&MetricsRow) -> ControlFlow<()>,
) -> Result<RunOutcome<T>> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir).map_err(|e| {
        MeeeError::Config(format!("cannot create out_dir {}: {e}", config.out_dir.display()))
    })?;
    let start = Instant::now();
    let outcome = train::<T>(config, on_row, start)?;
    write_outputs(config, &outcome, start.elapsed().as_secs_f64())?;
    Ok(outcome)
}

fn write_outputs<T: Scalar>(config: &ExperimentConfig, outcome: &RunOutcome<T>, seconds: f64) -> Result<()> {
    let dir = &config.out_dir;
    write_metrics(&outcome.rows, &dir.join("metrics.csv"))?;
    config.write(&dir.join("config.toml"))?;
    save_policy(&outcome.policy, &dir.join("policy.ckpt"))?;
    if let Some(e) = &outcome.ensemble {
        save_ensemble(e, &dir.join("ensemble.ckpt"))?;
    }
    let last = outcome.rows.last();
    let summary = Summary {
        config,
        final_eval_return_mean: last.map(|r| r.eval_return_mean),
        final_eval_return_std: last.map(|r| r.eval_return_std),
        best_eval_return_mean: outcome.rows.iter().map(|r| r.eval_return_mean).reduce(f64::max),
        total_env_steps: outcome.total_env_steps,
        eval_env_steps: outcome.eval_env_steps,
        failed_updates: outcome.failed_updates,
        stopped_early: outcome.stopped_early,
        wall_clock_seconds: seconds,
    };
    let file = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(file, &summary)?;
    Ok(())
}

fn build_agent<T: Scalar>(config: &ExperimentConfig, env: &BuiltinEnv<T>) -> Result<SacAgent<T>> {
    let spec = env.spec();
    let (sd, ad) = (spec.state_dim, spec.action_dim);
    let seed = |name| derive_seed(config.seed, name);
    let policy = GaussianPolicy::new(
        sd,
        &spec.action_low,
        &spec.action_high,
        config.hidden_size,
        config.hidden_layers,
        config.activation,
        seed("policy"),
    )?;
    let critics = CriticPair::new(
        sd,
        ad,
        config.hidden_size,
        config.hidden_layers,
        config.activation,
        seed("critic1"),
        seed("critic2"),
        config.single_critic,
    )?;
    let sac = SacConfig {
        gamma: config.gamma,
        alpha: config.alpha,
        polyak: config.polyak,
        actor_lr: config.actor_lr,
        critic_lr: config.critic_lr,
        single_critic: config.single_critic,
        auto_alpha: config.auto_alpha,
        alpha_lr: config.alpha_lr,
    };
    SacAgent::new(policy, critics, sac)
}

fn build_ensemble<T: Scalar>(config: &ExperimentConfig, env: &BuiltinEnv<T>) -> Result<Ensemble<T>> {
    let spec = env.spec();
    Ensemble::new(
        spec.state_dim,
        spec.action_dim,
        config.ensemble_size,
        config.model_hidden_size,
        config.model_hidden_layers,
        config.activation,
        derive_seed(config.seed, "ensemble"),
        EnsembleConfig {
            learning_rate: config.model_lr,
            loss: config.model_loss,
            include_reward_in_variance: config.include_reward_in_variance,
            parallel: config.parallel,
        },
    )
}

/// Running averages of rollout statistics between evaluations.
#[derive(Default)]
struct RolloutTally {
    stored: usize,
    weight_sum: f64,
    variance_sum: f64,
}

impl RolloutTally {
    fn take(&mut self) -> (f64, f64) {
        let out = if self.stored == 0 {
            (1.0, 0.0)
        } else {
            let n = self.stored as f64;
            (self.weight_sum / n, self.variance_sum / n)
        };
        *self = Self::default();
        out
    }
}

fn train<T: Scalar>(
    config: &ExperimentConfig,
    mut on_row: impl FnMut(&MetricsRow) -> ControlFlow<()>,
    start: Instant,
) -> Result<RunOutcome<T>> {
    let env = BuiltinEnv::<T>::from_name(config.env_name)?;
    let spec = env.spec().clone();
    let variant = config.variant;
    let mut streams = Streams::new(config.seed);
    let mut agent = build_agent(config, &env)?;
    let mut ensemble = if variant.uses_model() {
        Some(build_ensemble(config, &env)?)
    } else {
        None
    };
    let explore = ExplorationParams::new(
        T::of(config.lambda),
        config.psi.iter().map(|&p| T::of(p)).collect(),
        config.k_candidates,
        config.include_base,
    )?;
    let temperature = variant.weights_updates().then(|| T::of(config.weight_temperature));

    let mut env_buffer = EnvBuffer::new(config.env_buffer_capacity)?;
    let mut model_buffer = ModelBuffer::new(config.model_buffer_capacity)?;
    let mut rows = Vec::new();
    let mut model_ready = false;
    let mut model_loss = 0.0;
    let mut tally = RolloutTally::default();
    let mut total_steps = 0usize;
    let mut eval_env_steps = 0usize;
    let mut failed_updates = 0usize;
    let mut consecutive_failures = 0usize;
    let mut weight_range: Option<(f64, f64)> = None;
    let mut stopped_early = false;

    let mut state = env.reset(&mut streams.env);
    let mut episode_steps = 0usize;

    'epochs: for epoch in 0..config.n_epochs {
        if let Some(ens) = ensemble.as_mut() {
            if env_buffer.len() >= config.model_batch_size {
                let traces = ens.train(
                    &env_buffer,
                    config.model_train_epochs,
                    config.model_batch_size,
                    &mut streams.model,
                )?;
                model_loss = traces.iter().map(|t| t.last().unwrap().as_f64()).sum::<f64>() / traces.len() as f64;
                model_ready = true;
            }
        }
        let rollout_params = RolloutParams {
            parallel: config.parallel,
            ..RolloutParams::new(config.model_rollouts_per_step, config.horizon_at(epoch))?
        };

        for _ in 0..config.steps_per_epoch {
            let action = if total_steps < config.warmup_steps {
                spec.action_low
                    .iter()
                    .zip(&spec.action_high)
                    .map(|(&lo, &hi)| T::of(streams.act.random_range(lo.as_f64()..hi.as_f64())))
                    .collect()
            } else {
                match ensemble.as_ref() {
                    Some(ens) if variant.explores() && model_ready => {
                        select_action(&state, &agent.policy, &agent.critics, ens, &explore, &mut streams.act)?.action
                    }
                    _ => agent.policy.sample(&state, &mut streams.act)?.0,
                }
            };
            let out = env.step(&state, &action)?;
            total_steps += 1;
            episode_steps += 1;
            env_buffer.push(Transition {
                s: state,
                a: action,
                r: out.reward,
                s_next: out.next_state.clone(),
                done: out.done,
            })?;
            if out.done || episode_steps >= spec.max_episode_steps {
                state = env.reset(&mut streams.env);
                episode_steps = 0;
            } else {
                state = out.next_state;
            }

            if let (Some(ens), true) = (ensemble.as_ref(), model_ready) {
                let stats = generate_rollouts(
                    ens,
                    &agent.policy,
                    &env,
                    &env_buffer,
                    &mut model_buffer,
                    &rollout_params,
                    temperature,
                    &mut streams.rollout,
                )?;
                tally.stored += stats.stored;
                tally.weight_sum += stats.mean_weight * stats.stored as f64;
                tally.variance_sum += stats.mean_variance * stats.stored as f64;
            }

            if total_steps >= config.warmup_steps {
                for _ in 0..config.gradient_updates_per_step {
                    let (batch, weights) = training_batch(config, &env_buffer, &model_buffer, &mut streams.batch)?;
                    for w in &weights {
                        let w = w.as_f64();
                        weight_range = Some(weight_range.map_or((w, w), |(lo, hi)| (lo.min(w), hi.max(w))));
                    }
                    match agent.update(&batch, &weights, &mut streams.update) {
                        Ok(_) => consecutive_failures = 0,
                        Err(MeeeError::NonFinite(what)) => {
                            failed_updates += 1;
                            consecutive_failures += 1;
                            if consecutive_failures >= MAX_CONSECUTIVE_FAILURES {
                                return Err(MeeeError::Divergence(format!(
                                    "{consecutive_failures} consecutive non-finite updates at env step {total_steps} (last: {what})"
                                )));
                            }
                        }
                        Err(e) => return Err(e),
                    }
                }
            }

            if total_steps.is_multiple_of(config.eval_interval) {
                let eval_env = env.clone();
                let (mean, std) = evaluate_policy(
                    &agent.policy,
                    &eval_env,
                    config.eval_episodes,
                    &mut rng_from_seed(streams.eval_seed),
                )?;
                eval_env_steps += config.eval_episodes * spec.max_episode_steps;
                let (mean_weight, mean_variance) = tally.take();
                let row = MetricsRow {
                    epoch,
                    total_env_steps: total_steps,
                    eval_return_mean: mean,
                    eval_return_std: std,
                    mean_model_loss: model_loss,
                    mean_rollout_weight: mean_weight,
                    mean_ensemble_variance: mean_variance,
                    wall_clock_seconds: if config.record_wall_clock {
                        start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                };
                let flow = on_row(&row);
                rows.push(row);
                if flow.is_break() {
                    stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }

    Ok(RunOutcome {
        rows,
        policy: agent.policy,
        ensemble,
        env_buffer,
        model_buffer,
        total_env_steps: total_steps,
        eval_env_steps,
        failed_updates,
        weight_range,
        stopped_early,
    })
}

/// Agent minibatch: a `real_data_fraction` share of real transitions
/// (weight 1) followed by imagined ones with their stored weights. Only
/// real data is used while the model buffer is empty.
fn training_batch<T: Scalar>(
    config: &ExperimentConfig,
    env_buffer: &EnvBuffer<T>,
    model_buffer: &ModelBuffer<T>,
    rng: &mut SimRng,
) -> Result<(Vec<Transition<T>>, Vec<T>)> {
    let n = config.batch_size;
    let n_real = if !config.variant.uses_model() || model_buffer.is_empty() {
        n
    } else {
        (config.real_data_fraction * n as f64).round() as usize
    };
    let mut batch = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    if n_real > 0 {
        batch.extend(env_buffer.sample_batch(n_real, rng)?);
        weights.resize(n_real, T::one());
    }
    if n_real < n {
        for item in model_buffer.sample_batch(n - n_real, rng)? {
            batch.push(item.transition);
            weights.push(item.weight);
        }
    }
    Ok((batch, weights))
}

/// Loads a policy checkpoint and evaluates its deterministic action on a
/// built-in environment.
pub fn evaluate_checkpoint(
    path: &Path,
    env_name: crate::env::EnvName,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let policy: GaussianPolicy<f64> = crate::checkpoint::load_policy(path)?;
    let env = BuiltinEnv::<f64>::from_name(env_name)?;
    let spec = env.spec();
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(MeeeError::Checkpoint(format!(
            "policy maps {} states to {} actions but {env_name} needs {} to {}",
            policy.state_dim(),
            policy.action_dim(),
            spec.state_dim,
            spec.action_dim
        )));
    }
    evaluate_policy(&policy, &env, episodes, &mut rng_from_seed(derive_seed(seed, "eval")))
}
