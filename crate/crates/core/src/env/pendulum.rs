//! Torque-limited pendulum swing-up. Observations are
//! `(cos theta, sin theta, theta_dot)` with `theta = 0` upright.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{MeeeError, Result};
use crate::scalar::Scalar;

use super::{EnvSpec, Environment, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PendulumStart {
    /// Angle uniform in `[-pi, pi]`, velocity uniform in `[-1, 1]`.
    Uniform,
    Fixed { angle: f64, velocity: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub max_episode_steps: usize,
    pub start: PendulumStart,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            max_episode_steps: 200,
            start: PendulumStart::Uniform,
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle<T: Scalar>(theta: T) -> T {
    let pi = T::of(PI);
    let two_pi = pi + pi;
    let mut x = (theta + pi) % two_pi;
    if x < T::zero() {
        x += two_pi;
    }
    let wrapped = x - pi;
    if wrapped <= -pi {
        wrapped + two_pi
    } else {
        wrapped
    }
}

#[derive(Debug, Clone)]
pub struct PendulumEnv<T> {
    params: PendulumParams,
    spec: EnvSpec<T>,
}

impl<T: Scalar> PendulumEnv<T> {
    pub fn new(params: PendulumParams) -> Result<Self> {
        let positive = [params.mass, params.length, params.gravity, params.dt, params.max_torque, params.max_speed];
        if positive.iter().any(|x| !(*x > 0.0)) {
            return Err(MeeeError::InvalidArgument("pendulum parameters must be positive".into()));
        }
        let spec = EnvSpec::new(
            3,
            vec![T::of(-params.max_torque)],
            vec![T::of(params.max_torque)],
            params.max_episode_steps,
            false,
        )?;
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn observe(angle: T, velocity: T) -> Vec<T> {
        vec![angle.cos(), angle.sin(), velocity]
    }

    pub fn angle(state: &[T]) -> T {
        normalize_angle(state[1].atan2(state[0]))
    }
}

impl<T: Scalar> Environment<T> for PendulumEnv<T> {
    fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let (angle, velocity) = match self.params.start {
            PendulumStart::Uniform => (rng.random_range(-PI..=PI), rng.random_range(-1.0..=1.0)),
            PendulumStart::Fixed { angle, velocity } => (angle, velocity),
        };
        Self::observe(T::of(angle), T::of(velocity))
    }

    fn step(&self, state: &[T], action: &[T]) -> Result<StepOutcome<T>> {
        self.spec.check_state(state)?;
        self.spec.check_action(action)?;
        let p = &self.params;
        let theta = Self::angle(state);
        let velocity = state[2];
        let torque = action[0];
        let reward = -(theta * theta + T::of(0.1) * velocity * velocity + T::of(0.001) * torque * torque);

        let accel = T::of(3.0 * p.gravity / (2.0 * p.length)) * theta.sin()
            + T::of(3.0 / (p.mass * p.length * p.length)) * torque;
        let max_speed = T::of(p.max_speed);
        let new_velocity = (velocity + accel * T::of(p.dt)).max(-max_speed).min(max_speed);
        let new_theta = theta + new_velocity * T::of(p.dt);
        Ok(StepOutcome {
            next_state: Self::observe(new_theta, new_velocity),
            reward,
            done: false,
        })
    }

    fn is_terminal(&self, state: &[T]) -> Result<bool> {
        self.spec.check_state(state)?;
        Ok(false)
    }

    fn reward_bounds(&self) -> (T, T) {
        let p = &self.params;
        let worst = PI * PI + 0.1 * p.max_speed * p.max_speed + 0.001 * p.max_torque * p.max_torque;
        (T::of(-worst), T::zero())
    }
}
