//! Imagined transitions from the learned ensemble, weighted by model
//! confidence, for the model buffer.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{EnvBuffer, ModelBuffer, WeightedTransition};
use crate::env::{Environment, Transition};
use crate::error::{MeeeError, Result};
use crate::model::{uncertainty_weight, Ensemble};
use crate::random::rng_from_seed;
use crate::sac::GaussianPolicy;
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberSelection {
    /// A fresh uniformly drawn member for every imagined step.
    #[default]
    UniformPerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutParams {
    /// Rollouts started per call.
    pub rollouts: usize,
    /// Maximum imagined steps per rollout.
    pub horizon: usize,
    pub member_selection: MemberSelection,
    pub parallel: bool,
}

impl RolloutParams {
    pub fn new(rollouts: usize, horizon: usize) -> Result<Self> {
        let p = Self {
            rollouts,
            horizon,
            member_selection: MemberSelection::UniformPerStep,
            parallel: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.horizon == 0 {
            return Err(MeeeError::InvalidArgument("rollouts and horizon must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStats {
    pub stored: usize,
    /// Rollouts cut short by termination or a non-finite value.
    pub truncated: usize,
    pub mean_weight: f64,
    pub mean_variance: f64,
    /// How often each ensemble member produced a step.
    pub member_counts: Vec<usize>,
}

struct Imagined<T> {
    items: Vec<WeightedTransition<T>>,
    variances: Vec<T>,
    members: Vec<usize>,
    truncated: bool,
}

fn imagine<T: Scalar, E: Environment<T>>(
    ensemble: &Ensemble<T>,
    policy: &GaussianPolicy<T>,
    env: &E,
    env_buffer: &EnvBuffer<T>,
    horizon: usize,
    temperature: Option<T>,
    seed: u64,
) -> Result<Imagined<T>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Imagined {
        items: Vec::with_capacity(horizon),
        variances: Vec::with_capacity(horizon),
        members: Vec::with_capacity(horizon),
        truncated: false,
    };
    let start = rng.random_range(0..env_buffer.len());
    let mut state = env_buffer.get(start).expect("index in range").s.clone();
    for _ in 0..horizon {
        let (action, _) = policy.sample(&state, &mut rng)?;
        let member = ensemble.sample_member(&mut rng);
        out.members.push(member);
        let (next, reward) = match ensemble.member(member).predict(&state, &action, &mut rng) {
            Ok(p) => p,
            Err(MeeeError::NonFinite(_)) => {
                out.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let variance = ensemble.variance(&state, &action)?;
        if !variance.is_finite() || !all_finite(&action) {
            out.truncated = true;
            break;
        }
        let weight = match temperature {
            Some(t) => uncertainty_weight(variance, t)?,
            None => T::one(),
        };
        let done = env.is_terminal(&next)?;
        out.items.push(WeightedTransition::new(
            Transition {
                s: state,
                a: action,
                r: reward,
                s_next: next.clone(),
                done,
            },
            weight,
        )?);
        out.variances.push(variance);
        if done {
            out.truncated = true;
            break;
        }
        state = next;
    }
    Ok(out)
}

/// Runs `params.rollouts` model rollouts from start states drawn uniformly
/// out of `env_buffer` and appends every imagined transition to
/// `model_buffer` in rollout order.
///
/// Actions come from the plain policy. Each step uses a uniformly drawn
/// member; its weight is `uncertainty_weight(V(s, a), T)` at the generating
/// state-action, or exactly 1 when `temperature` is `None`. Rollout `i`
/// draws from its own stream seeded `base + i` with `base` taken from
/// `rng`, so parallel and sequential execution agree bitwise.
#[allow(clippy::too_many_arguments)]
pub fn generate_rollouts<T, E, R>(
    ensemble: &Ensemble<T>,
    policy: &GaussianPolicy<T>,
    env: &E,
    env_buffer: &EnvBuffer<T>,
    model_buffer: &mut ModelBuffer<T>,
    params: &RolloutParams,
    temperature: Option<T>,
    rng: &mut R,
) -> Result<RolloutStats>
where
    T: Scalar,
    E: Environment<T> + Sync,
    R: RngCore + ?Sized,
{
    params.validate()?;
    if env_buffer.is_empty() {
        return Err(MeeeError::EmptyBuffer);
    }
    let base = rng.next_u64();
    let run = |i: usize| {
        imagine(
            ensemble,
            policy,
            env,
            env_buffer,
            params.horizon,
            temperature,
            base.wrapping_add(i as u64),
        )
    };
    let results: Vec<Result<Imagined<T>>> = if params.parallel {
        (0..params.rollouts).into_par_iter().map(run).collect()
    } else {
        (0..params.rollouts).map(run).collect()
    };

    let mut stats = RolloutStats {
        stored: 0,
        truncated: 0,
        mean_weight: 0.0,
        mean_variance: 0.0,
        member_counts: vec![0; ensemble.len()],
    };
    let (mut weight_sum, mut variance_sum) = (0.0, 0.0);
    for r in results {
        let imagined = r?;
        stats.truncated += imagined.truncated as usize;
        for m in imagined.members {
            stats.member_counts[m] += 1;
        }
        for (item, v) in imagined.items.into_iter().zip(imagined.variances) {
            weight_sum += item.weight.as_f64();
            variance_sum += v.as_f64();
            model_buffer.push(item)?;
            stats.stored += 1;
        }
    }
    if stats.stored > 0 {
        stats.mean_weight = weight_sum / stats.stored as f64;
        stats.mean_variance = variance_sum / stats.stored as f64;
    }
    Ok(stats)
}
