use rand::Rng;

use crate::env::{Environment, LqrSolution};
use crate::error::{MeeeError, Result};
use crate::sac::GaussianPolicy;
use crate::scalar::Scalar;

/// A state-feedback controller used for evaluation.
pub trait DeterministicPolicy<T> {
    fn act(&self, state: &[T]) -> Result<Vec<T>>;
}

impl<T: Scalar> DeterministicPolicy<T> for GaussianPolicy<T> {
    fn act(&self, state: &[T]) -> Result<Vec<T>> {
        self.mode(state)
    }
}

impl<T: Scalar> DeterministicPolicy<T> for LqrSolution<T> {
    fn act(&self, state: &[T]) -> Result<Vec<T>> {
        Ok(self.action(state))
    }
}

/// Adapts a closure into a [`DeterministicPolicy`].
pub struct FnPolicy<F>(pub F);

impl<T, F: Fn(&[T]) -> Vec<T>> DeterministicPolicy<T> for FnPolicy<F> {
    fn act(&self, state: &[T]) -> Result<Vec<T>> {
        Ok((self.0)(state))
    }
}

/// Undiscounted return of each of `episodes` full episodes. Actions are
/// clipped to the box before stepping.
pub fn episode_returns<T, E, P, R>(policy: &P, env: &E, episodes: usize, rng: &mut R) -> Result<Vec<f64>>
where
    T: Scalar,
    E: Environment<T>,
    P: DeterministicPolicy<T> + ?Sized,
    R: Rng + ?Sized,
{
    if episodes == 0 {
        return Err(MeeeError::InvalidArgument("episodes must be >= 1".into()));
    }
    let spec = env.spec().clone();
    (0..episodes)
        .map(|_| {
            let mut state = env.reset(rng);
            let mut total = 0.0;
            for _ in 0..spec.max_episode_steps {
                let action = spec.clip_action(&policy.act(&state)?);
                let out = env.step(&state, &action)?;
                total += out.reward.as_f64();
                state = out.next_state;
                if out.done {
                    break;
                }
            }
            Ok(total)
        })
        .collect()
}

/// Mean and population standard deviation of episode returns.
pub fn evaluate_policy<T, E, P, R>(policy: &P, env: &E, episodes: usize, rng: &mut R) -> Result<(f64, f64)>
where
    T: Scalar,
    E: Environment<T>,
    P: DeterministicPolicy<T> + ?Sized,
    R: Rng + ?Sized,
{
    let returns = episode_returns(policy, env, episodes, rng)?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
