//! Optimistic action selection: perturb the policy action, score each
//! candidate by `Q(s, a) + lambda * V(s, a)` and keep the best.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MeeeError, Result};
use crate::model::Ensemble;
use crate::random::NoiseSource;
use crate::sac::{CriticPair, GaussianPolicy};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationParams<T> {
    /// Bonus weight on ensemble disagreement.
    pub lambda: T,
    /// Diagonal perturbation covariance, one entry per action dimension.
    pub psi: Vec<T>,
    /// Number of perturbed candidates.
    pub k: usize,
    /// Whether the unperturbed policy action is itself a candidate.
    pub include_base: bool,
}

impl<T: Scalar> ExplorationParams<T> {
    pub fn new(lambda: T, psi: Vec<T>, k: usize, include_base: bool) -> Result<Self> {
        let p = Self {
            lambda,
            psi,
            k,
            include_base,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= T::zero() && self.lambda.is_finite()) {
            return Err(MeeeError::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.psi.iter().any(|&p| !(p > T::zero() && p.is_finite())) {
            return Err(MeeeError::InvalidArgument("psi entries must be > 0".into()));
        }
        if self.k == 0 && !self.include_base {
            return Err(MeeeError::InvalidArgument(
                "empty candidate set: k = 0 and include_base = false".into(),
            ));
        }
        Ok(())
    }
}

/// `clip(a + z, box)` with `z ~ N(0, diag(psi))`.
pub fn augment_action<T: Scalar, N: NoiseSource + ?Sized>(
    action: &[T],
    psi: &[T],
    noise: &mut N,
    low: &[T],
    high: &[T],
) -> Result<Vec<T>> {
    check_dim("psi", action.len(), psi.len())?;
    check_dim("action low", action.len(), low.len())?;
    check_dim("action high", action.len(), high.len())?;
    Ok(action
        .iter()
        .zip(psi)
        .zip(low.iter().zip(high))
        .map(|((&a, &p), (&lo, &hi))| (a + p.sqrt() * noise.standard_normal::<T>()).max(lo).min(hi))
        .collect())
}

/// Index of the largest score, lowest index among ties. NaN never wins.
pub fn argmax_first<T: Scalar>(scores: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            _ if s.is_nan() => {}
            None => best = Some(i),
            Some(b) if s > scores[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// The chosen action together with the full scored candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub action: Vec<T>,
    pub index: usize,
    pub candidates: Vec<Vec<T>>,
    pub q_values: Vec<T>,
    pub variances: Vec<T>,
    pub scores: Vec<T>,
}

/// Draws the base action from the policy, builds the candidate set (base
/// first when included, then `k` perturbations of the base) and returns
/// the highest-scoring candidate. Disagreement is only evaluated when
/// `lambda > 0`; otherwise the reported variances are zero.
pub fn select_action<T: Scalar, N: NoiseSource + ?Sized>(
    state: &[T],
    policy: &GaussianPolicy<T>,
    critics: &CriticPair<T>,
    ensemble: &Ensemble<T>,
    params: &ExplorationParams<T>,
    noise: &mut N,
) -> Result<Selection<T>> {
    params.validate()?;
    check_dim("psi", policy.action_dim(), params.psi.len())?;
    let (base, _) = policy.sample(state, noise)?;
    let (low, high) = (policy.action_low(), policy.action_high());
    let mut candidates = Vec::with_capacity(params.k + 1);
    if params.include_base {
        candidates.push(base.clone());
    }
    for _ in 0..params.k {
        candidates.push(augment_action(&base, &params.psi, noise, &low, &high)?);
    }
    let bonus = params.lambda > T::zero();
    let mut q_values = Vec::with_capacity(candidates.len());
    let mut variances = Vec::with_capacity(candidates.len());
    let mut scores = Vec::with_capacity(candidates.len());
    for a in &candidates {
        let q = critics.q_value(state, a)?;
        let v = if bonus { ensemble.variance(state, a)? } else { T::zero() };
        q_values.push(q);
        variances.push(v);
        scores.push(if bonus { q + params.lambda * v } else { q });
    }
    let index = argmax_first(&scores)
        .ok_or_else(|| MeeeError::NonFinite("every candidate score is NaN".into()))?;
    Ok(Selection {
        action: candidates[index].clone(),
        index,
        candidates,
        q_values,
        variances,
        scores,
    })
}
