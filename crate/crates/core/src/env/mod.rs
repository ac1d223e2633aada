//! Environments: the deterministic MDP interface and the two built-in
//! desk-scale tasks.

mod linalg;
mod lqr;
mod pendulum;

pub use linalg::Matrix;
pub use lqr::{lqr_optimal_value, LqrEnv, LqrParams, LqrSolution};
pub use pendulum::{PendulumEnv, PendulumParams, PendulumStart};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MeeeError, Result};
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec<T> {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<T>,
    pub action_high: Vec<T>,
    pub max_episode_steps: usize,
    pub has_termination: bool,
}

impl<T: Scalar> EnvSpec<T> {
    pub fn new(
        state_dim: usize,
        action_low: Vec<T>,
        action_high: Vec<T>,
        max_episode_steps: usize,
        has_termination: bool,
    ) -> Result<Self> {
        check_dim("action bounds", action_low.len(), action_high.len())?;
        if state_dim == 0 || action_low.is_empty() || max_episode_steps == 0 {
            return Err(MeeeError::InvalidArgument(
                "state_dim, action_dim and max_episode_steps must be positive".into(),
            ));
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(MeeeError::InvalidArgument(
                "action_low must be strictly below action_high".into(),
            ));
        }
        Ok(Self {
            state_dim,
            action_dim: action_low.len(),
            action_low,
            action_high,
            max_episode_steps,
            has_termination,
        })
    }

    pub fn contains_action(&self, action: &[T]) -> bool {
        action.len() == self.action_dim
            && action
                .iter()
                .zip(self.action_low.iter().zip(&self.action_high))
                .all(|(&a, (&l, &h))| a >= l && a <= h)
    }

    pub fn clip_action(&self, action: &[T]) -> Vec<T> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&l, &h))| a.max(l).min(h))
            .collect()
    }

    pub(crate) fn check_action(&self, action: &[T]) -> Result<()> {
        check_dim("action", self.action_dim, action.len())?;
        if !all_finite(action) {
            return Err(MeeeError::NonFinite("action".into()));
        }
        if !self.contains_action(action) {
            return Err(MeeeError::ActionOutOfBounds {
                action: action.iter().map(|x| x.as_f64()).collect(),
                low: self.action_low.iter().map(|x| x.as_f64()).collect(),
                high: self.action_high.iter().map(|x| x.as_f64()).collect(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, state: &[T]) -> Result<()> {
        check_dim("state", self.state_dim, state.len())?;
        if !all_finite(state) {
            return Err(MeeeError::NonFinite("state".into()));
        }
        Ok(())
    }
}

/// One environment step `(s, a, r, s', done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub s: Vec<T>,
    pub a: Vec<T>,
    pub r: T,
    pub s_next: Vec<T>,
    pub done: bool,
}

impl<T: Scalar> Transition<T> {
    pub fn validate(&self, spec: &EnvSpec<T>) -> Result<()> {
        check_dim("transition state", spec.state_dim, self.s.len())?;
        check_dim("transition next state", spec.state_dim, self.s_next.len())?;
        check_dim("transition action", spec.action_dim, self.a.len())?;
        if !(all_finite(&self.s) && all_finite(&self.a) && all_finite(&self.s_next) && self.r.is_finite()) {
            return Err(MeeeError::NonFinite("transition".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub next_state: Vec<T>,
    pub reward: T,
    pub done: bool,
}

/// A deterministic MDP with box-bounded continuous actions.
pub trait Environment<T: Scalar> {
    fn spec(&self) -> &EnvSpec<T>;

    /// Draws an initial state from the initial-state distribution.
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T>;

    /// Pure transition. Actions outside the box are rejected; clipping is
    /// the caller's job.
    fn step(&self, state: &[T], action: &[T]) -> Result<StepOutcome<T>>;

    /// Whether `state` is terminal. Non-finite states are an error.
    fn is_terminal(&self, state: &[T]) -> Result<bool>;

    /// Interval containing every reward reachable within one episode.
    fn reward_bounds(&self) -> (T, T);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Lqr,
    Pendulum,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Lqr => "lqr",
            EnvName::Pendulum => "pendulum",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = MeeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lqr" => Ok(EnvName::Lqr),
            "pendulum" => Ok(EnvName::Pendulum),
            other => Err(MeeeError::InvalidArgument(format!(
                "unknown environment {other:?} (expected \"lqr\" or \"pendulum\")"
            ))),
        }
    }
}

/// Runtime-selected built-in environment.
#[derive(Debug, Clone)]
pub enum BuiltinEnv<T> {
    Lqr(LqrEnv<T>),
    Pendulum(PendulumEnv<T>),
}

impl<T: Scalar> BuiltinEnv<T> {
    pub fn from_name(name: EnvName) -> Result<Self> {
        Ok(match name {
            EnvName::Lqr => BuiltinEnv::Lqr(LqrEnv::new(LqrParams::point_mass())?),
            EnvName::Pendulum => BuiltinEnv::Pendulum(PendulumEnv::new(PendulumParams::default())?),
        })
    }

    pub fn name(&self) -> EnvName {
        match self {
            BuiltinEnv::Lqr(_) => EnvName::Lqr,
            BuiltinEnv::Pendulum(_) => EnvName::Pendulum,
        }
    }
}

impl<T: Scalar> Environment<T> for BuiltinEnv<T> {
    fn spec(&self) -> &EnvSpec<T> {
        match self {
            BuiltinEnv::Lqr(e) => e.spec(),
            BuiltinEnv::Pendulum(e) => e.spec(),
        }
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        match self {
            BuiltinEnv::Lqr(e) => e.reset(rng),
            BuiltinEnv::Pendulum(e) => e.reset(rng),
        }
    }

    fn step(&self, state: &[T], action: &[T]) -> Result<StepOutcome<T>> {
        match self {
            BuiltinEnv::Lqr(e) => e.step(state, action),
            BuiltinEnv::Pendulum(e) => e.step(state, action),
        }
    }

    fn is_terminal(&self, state: &[T]) -> Result<bool> {
        match self {
            BuiltinEnv::Lqr(e) => e.is_terminal(state),
            BuiltinEnv::Pendulum(e) => e.is_terminal(state),
        }
    }

    fn reward_bounds(&self) -> (T, T) {
        match self {
            BuiltinEnv::Lqr(e) => e.reward_bounds(),
            BuiltinEnv::Pendulum(e) => e.reward_bounds(),
        }
    }
}
