//! Soft actor-critic with per-sample confidence weights on both losses.
//!
//! With every weight equal to one the update is the standard SAC update,
//! operation for operation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{check_dim, MeeeError, Result};
use crate::nn::{mlp_sizes, Activation, AdamState, DenseNet, Gradients, Trace};
use crate::random::NoiseSource;
use crate::scalar::{softplus, Scalar};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

fn concat<T: Copy>(s: &[T], a: &[T]) -> Vec<T> {
    s.iter().chain(a).copied().collect()
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq<T: Scalar>(u: T) -> T {
    T::of(2.0) * (T::of(std::f64::consts::LN_2) - u - softplus(T::of(-2.0) * u))
}

/// Tanh-squashed diagonal Gaussian policy rescaled to the action box.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy<T> {
    net: DenseNet<T>,
    center: Vec<T>,
    half_range: Vec<T>,
}

/// Everything produced while sampling one action.
#[derive(Debug, Clone)]
pub struct PolicySample<T> {
    pub action: Vec<T>,
    pub log_prob: T,
    pub pre_squash: Vec<T>,
    pub noise: Vec<T>,
}

impl<T: Scalar> GaussianPolicy<T> {
    pub fn new(
        state_dim: usize,
        action_low: &[T],
        action_high: &[T],
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        check_dim("action bounds", action_low.len(), action_high.len())?;
        let sizes = mlp_sizes(state_dim, hidden, hidden_layers, 2 * action_low.len());
        Self::from_net(DenseNet::new(&sizes, activation, seed)?, action_low, action_high)
    }

    pub fn from_net(net: DenseNet<T>, action_low: &[T], action_high: &[T]) -> Result<Self> {
        check_dim("action bounds", action_low.len(), action_high.len())?;
        check_dim("policy output", 2 * action_low.len(), net.output_dim())?;
        if action_low.iter().zip(action_high).any(|(l, h)| !(l < h)) {
            return Err(MeeeError::InvalidArgument("policy action box is empty".into()));
        }
        let half = T::of(0.5);
        Ok(Self {
            center: action_low.iter().zip(action_high).map(|(&l, &h)| half * (l + h)).collect(),
            half_range: action_low.iter().zip(action_high).map(|(&l, &h)| half * (h - l)).collect(),
            net,
        })
    }

    pub fn net(&self) -> &DenseNet<T> {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.center.len()
    }

    pub fn action_low(&self) -> Vec<T> {
        self.center.iter().zip(&self.half_range).map(|(&c, &h)| c - h).collect()
    }

    pub fn action_high(&self) -> Vec<T> {
        self.center.iter().zip(&self.half_range).map(|(&c, &h)| c + h).collect()
    }

    /// Mean and clamped log-std heads.
    pub fn heads(&self, state: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let out = self.net.forward(state)?;
        Ok(split_heads(&out, self.action_dim()))
    }

    fn squash(&self, u: &[T]) -> Vec<T> {
        // keep tanh strictly inside (-1, 1) so actions never touch the bounds
        let limit = T::one() - T::epsilon();
        u.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(&ui, (&c, &h))| c + h * ui.tanh().max(-limit).min(limit))
            .collect()
    }

    /// Density correction of the squashing map at pre-squash value `u`.
    fn log_prob_from(&self, u: &[T], z: &[T], log_std: &[T]) -> T {
        let half_log_two_pi = T::of(0.5 * (2.0 * PI).ln());
        let half = T::of(0.5);
        (0..u.len())
            .map(|d| {
                -half * z[d] * z[d] - log_std[d] - half_log_two_pi
                    - self.half_range[d].ln()
                    - log_one_minus_tanh_sq(u[d])
            })
            .sum()
    }

    pub fn sample_detailed<N: NoiseSource + ?Sized>(&self, state: &[T], noise: &mut N) -> Result<PolicySample<T>> {
        let (mean, log_std) = self.heads(state)?;
        let z: Vec<T> = (0..self.action_dim()).map(|_| noise.standard_normal::<T>()).collect();
        let u: Vec<T> = (0..self.action_dim())
            .map(|d| mean[d] + log_std[d].exp() * z[d])
            .collect();
        let action = self.squash(&u);
        let log_prob = self.log_prob_from(&u, &z, &log_std);
        Ok(PolicySample {
            action,
            log_prob,
            pre_squash: u,
            noise: z,
        })
    }

    /// Samples an action and returns it with its exact log-density.
    pub fn sample<N: NoiseSource + ?Sized>(&self, state: &[T], noise: &mut N) -> Result<(Vec<T>, T)> {
        let s = self.sample_detailed(state, noise)?;
        Ok((s.action, s.log_prob))
    }

    /// Deterministic action: the squashed mean.
    pub fn mode(&self, state: &[T]) -> Result<Vec<T>> {
        let (mean, _) = self.heads(state)?;
        Ok(self.squash(&mean))
    }

    /// Log-density of an arbitrary action strictly inside the box.
    pub fn log_prob(&self, state: &[T], action: &[T]) -> Result<T> {
        check_dim("action", self.action_dim(), action.len())?;
        let (mean, log_std) = self.heads(state)?;
        let u: Vec<T> = action
            .iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(&a, (&c, &h))| ((a - c) / h).atanh())
            .collect();
        let z: Vec<T> = (0..u.len()).map(|d| (u[d] - mean[d]) / log_std[d].exp()).collect();
        Ok(self.log_prob_from(&u, &z, &log_std))
    }
}

fn split_heads<T: Scalar>(out: &[T], action_dim: usize) -> (Vec<T>, Vec<T>) {
    let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
    let mean = out[..action_dim].to_vec();
    let log_std = out[action_dim..].iter().map(|&x| x.max(lo).min(hi)).collect();
    (mean, log_std)
}

/// Twin Q networks over `(s, a)` with Polyak-averaged target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair<T> {
    pub q1: DenseNet<T>,
    pub q2: DenseNet<T>,
    pub q1_target: DenseNet<T>,
    pub q2_target: DenseNet<T>,
    /// When set only `q1` is used: no min-clipping and `q2` is never trained.
    pub single: bool,
}

impl<T: Scalar> CriticPair<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        seed_q1: u64,
        seed_q2: u64,
        single: bool,
    ) -> Result<Self> {
        let sizes = mlp_sizes(state_dim + action_dim, hidden, hidden_layers, 1);
        let q1 = DenseNet::new(&sizes, activation, seed_q1)?;
        let q2 = DenseNet::new(&sizes, activation, seed_q2)?;
        Self::from_nets(q1, q2, single)
    }

    /// Targets start as copies of the online networks.
    pub fn from_nets(q1: DenseNet<T>, q2: DenseNet<T>, single: bool) -> Result<Self> {
        check_dim("critic output", 1, q1.output_dim())?;
        check_dim("critic output", 1, q2.output_dim())?;
        check_dim("critic input", q1.input_dim(), q2.input_dim())?;
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            single,
        })
    }

    /// Conservative online value: `min(q1, q2)`, or `q1` alone for a single critic.
    pub fn q_value(&self, state: &[T], action: &[T]) -> Result<T> {
        let x = concat(state, action);
        let v1 = self.q1.forward(&x)?[0];
        if self.single {
            return Ok(v1);
        }
        Ok(v1.min(self.q2.forward(&x)?[0]))
    }

    pub fn target_value(&self, state: &[T], action: &[T]) -> Result<T> {
        let x = concat(state, action);
        let v1 = self.q1_target.forward(&x)?[0];
        if self.single {
            return Ok(v1);
        }
        Ok(v1.min(self.q2_target.forward(&x)?[0]))
    }

    /// `target <- polyak * target + (1 - polyak) * online`.
    pub fn update_targets(&mut self, polyak: T) {
        self.q1_target.soft_update_from(&self.q1, polyak);
        if !self.single {
            self.q2_target.soft_update_from(&self.q2, polyak);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub polyak: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub single_critic: bool,
    pub auto_alpha: bool,
    pub alpha_lr: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.2,
            polyak: 0.995,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            single_critic: false,
            auto_alpha: false,
            alpha_lr: 3e-4,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(MeeeError::InvalidArgument(what.to_string()));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak must lie in [0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.alpha_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

fn check_weights<T: Scalar>(weights: &[T], n: usize) -> Result<()> {
    check_dim("loss weights", n, weights.len())?;
    for &w in weights {
        crate::buffer::check_weight(w)?;
    }
    Ok(())
}

/// Soft TD targets `r + gamma * (min target Q(s', a') - alpha * log pi(a'|s'))`
/// with `a'` freshly sampled; terminal transitions bootstrap nothing and
/// draw no noise.
pub fn td_targets<T: Scalar, N: NoiseSource + ?Sized>(
    batch: &[Transition<T>],
    critics: &CriticPair<T>,
    policy: &GaussianPolicy<T>,
    alpha: T,
    gamma: T,
    noise: &mut N,
) -> Result<Vec<T>> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return Ok(t.r);
            }
            let (a_next, log_prob) = policy.sample(&t.s_next, noise)?;
            let soft_q = critics.target_value(&t.s_next, &a_next)? - alpha * log_prob;
            Ok(t.r + gamma * soft_q)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CriticLoss<T> {
    pub loss: T,
    pub q1_grads: Gradients<T>,
    /// `None` for a single critic.
    pub q2_grads: Option<Gradients<T>>,
    pub targets: Vec<T>,
}

/// Weighted Bellman residual
/// `mean_j w_j [(q1(s,a) - y)^2 + (q2(s,a) - y)^2]` and its gradients.
pub fn critic_loss<T: Scalar, N: NoiseSource + ?Sized>(
    batch: &[Transition<T>],
    weights: &[T],
    critics: &CriticPair<T>,
    policy: &GaussianPolicy<T>,
    alpha: T,
    gamma: T,
    noise: &mut N,
) -> Result<CriticLoss<T>> {
    check_weights(weights, batch.len())?;
    let targets = td_targets(batch, critics, policy, alpha, gamma, noise)?;
    critic_loss_with_targets(batch, weights, critics, targets)
}

/// [`critic_loss`] against precomputed targets.
pub fn critic_loss_with_targets<T: Scalar>(
    batch: &[Transition<T>],
    weights: &[T],
    critics: &CriticPair<T>,
    targets: Vec<T>,
) -> Result<CriticLoss<T>> {
    check_weights(weights, batch.len())?;
    check_dim("critic targets", batch.len(), targets.len())?;
    let n = T::from_usize(batch.len()).unwrap();
    let two = T::of(2.0);
    let mut g1 = Gradients::zeros_like(&critics.q1);
    let mut g2 = (!critics.single).then(|| Gradients::zeros_like(&critics.q2));
    let mut total = T::zero();
    for ((t, &w), &y) in batch.iter().zip(weights).zip(&targets) {
        let x = concat(&t.s, &t.a);
        let tr1 = critics.q1.forward_trace(&x)?;
        let d1 = tr1.output()[0] - y;
        let mut residual = d1 * d1;
        critics.q1.backward_trace(&tr1, &[w * (two * d1) / n], Some(&mut g1), false)?;
        if let Some(g2) = g2.as_mut() {
            let tr2 = critics.q2.forward_trace(&x)?;
            let d2 = tr2.output()[0] - y;
            residual += d2 * d2;
            critics.q2.backward_trace(&tr2, &[w * (two * d2) / n], Some(g2), false)?;
        }
        total += w * residual;
    }
    Ok(CriticLoss {
        loss: total / n,
        q1_grads: g1,
        q2_grads: g2,
        targets,
    })
}

#[derive(Debug, Clone)]
pub struct ActorLoss<T> {
    pub loss: T,
    pub grads: Gradients<T>,
    /// Mean log-probability of the sampled actions (for temperature tuning).
    pub mean_log_prob: T,
}

/// Weighted actor loss `mean_j w_j (alpha * log pi(a_j|s_j) - Q(s_j, a_j))`
/// with `a_j` reparametrized from the policy. Gradients flow through the
/// action into the critic input; critic parameters are left alone.
pub fn actor_loss<T: Scalar, N: NoiseSource + ?Sized>(
    states: &[&[T]],
    weights: &[T],
    critics: &CriticPair<T>,
    policy: &GaussianPolicy<T>,
    alpha: T,
    noise: &mut N,
) -> Result<ActorLoss<T>> {
    check_weights(weights, states.len())?;
    let n = T::from_usize(states.len()).unwrap();
    let m = policy.action_dim();
    let (ls_lo, ls_hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
    let two = T::of(2.0);
    let mut grads = Gradients::zeros_like(&policy.net);
    let mut total = T::zero();
    let mut log_prob_sum = T::zero();
    for (&s, &w) in states.iter().zip(weights) {
        let trace: Trace<T> = policy.net.forward_trace(s)?;
        let (mean, log_std) = split_heads(trace.output(), m);
        let raw_log_std = &trace.output()[m..];
        let z: Vec<T> = (0..m).map(|_| noise.standard_normal::<T>()).collect();
        let sigma: Vec<T> = log_std.iter().map(|l| l.exp()).collect();
        let u: Vec<T> = (0..m).map(|d| mean[d] + sigma[d] * z[d]).collect();
        let action = policy.squash(&u);
        let log_prob = policy.log_prob_from(&u, &z, &log_std);

        let x = concat(s, &action);
        let tr1 = critics.q1.forward_trace(&x)?;
        let mut q = tr1.output()[0];
        let mut chosen = (&critics.q1, tr1);
        if !critics.single {
            let tr2 = critics.q2.forward_trace(&x)?;
            if tr2.output()[0] < q {
                q = tr2.output()[0];
                chosen = (&critics.q2, tr2);
            }
        }
        let dq_dx = chosen
            .0
            .backward_trace(&chosen.1, &[T::one()], None, true)?
            .expect("input gradient requested");
        let dq_da = &dq_dx[s.len()..];

        total += w * (alpha * log_prob - q);
        log_prob_sum += log_prob;

        let mut upstream = vec![T::zero(); 2 * m];
        for d in 0..m {
            let t = u[d].tanh();
            // d/du of the per-sample loss: alpha * 2 tanh(u) - dQ/da * h (1 - tanh^2 u)
            let g_u = alpha * two * t - dq_da[d] * policy.half_range[d] * (T::one() - t * t);
            upstream[d] = w * g_u / n;
            if raw_log_std[d] > ls_lo && raw_log_std[d] < ls_hi {
                upstream[m + d] = w * (g_u * sigma[d] * z[d] - alpha) / n;
            }
        }
        policy.net.backward_trace(&trace, &upstream, Some(&mut grads), false)?;
    }
    Ok(ActorLoss {
        loss: total / n,
        grads,
        mean_log_prob: log_prob_sum / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats<T> {
    pub critic_loss: T,
    pub actor_loss: T,
    pub alpha: T,
}

/// Policy, critics, their optimizers and the entropy temperature.
#[derive(Debug, Clone)]
pub struct SacAgent<T> {
    pub policy: GaussianPolicy<T>,
    pub critics: CriticPair<T>,
    policy_adam: AdamState<T>,
    q1_adam: AdamState<T>,
    q2_adam: AdamState<T>,
    config: SacConfig,
    log_alpha: T,
    alpha_moments: (T, T, u64),
    target_entropy: T,
}

impl<T: Scalar> SacAgent<T> {
    pub fn new(policy: GaussianPolicy<T>, critics: CriticPair<T>, config: SacConfig) -> Result<Self> {
        config.validate()?;
        check_dim(
            "critic input",
            policy.state_dim() + policy.action_dim(),
            critics.q1.input_dim(),
        )?;
        let mut critics = critics;
        critics.single = config.single_critic;
        Ok(Self {
            policy_adam: AdamState::new(policy.net()),
            q1_adam: AdamState::new(&critics.q1),
            q2_adam: AdamState::new(&critics.q2),
            log_alpha: T::of(config.alpha.max(f64::MIN_POSITIVE).ln()),
            alpha_moments: (T::zero(), T::zero(), 0),
            target_entropy: -T::from_usize(policy.action_dim()).unwrap(),
            config,
            policy,
            critics,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn alpha(&self) -> T {
        if self.config.auto_alpha {
            self.log_alpha.exp()
        } else {
            T::of(self.config.alpha)
        }
    }

    /// One gradient step: critics, then actor against the updated critics,
    /// then targets. Nothing is modified when any loss or gradient is
    /// non-finite.
    pub fn update<N: NoiseSource + ?Sized>(
        &mut self,
        batch: &[Transition<T>],
        weights: &[T],
        noise: &mut N,
    ) -> Result<UpdateStats<T>> {
        let alpha = self.alpha();
        let gamma = T::of(self.config.gamma);
        let c = critic_loss(batch, weights, &self.critics, &self.policy, alpha, gamma, noise)?;
        if !c.loss.is_finite() {
            return Err(MeeeError::NonFinite("critic loss".into()));
        }
        let lr_c = T::of(self.config.critic_lr);
        let mut q1 = self.critics.q1.clone();
        let mut q1_adam = self.q1_adam.clone();
        q1_adam.update(&mut q1, &c.q1_grads, lr_c)?;
        let mut q2 = self.critics.q2.clone();
        let mut q2_adam = self.q2_adam.clone();
        if let Some(g2) = &c.q2_grads {
            q2_adam.update(&mut q2, g2, lr_c)?;
        }
        let mut critics = self.critics.clone();
        critics.q1 = q1;
        critics.q2 = q2;

        let states: Vec<&[T]> = batch.iter().map(|t| t.s.as_slice()).collect();
        let a = actor_loss(&states, weights, &critics, &self.policy, alpha, noise)?;
        if !a.loss.is_finite() {
            return Err(MeeeError::NonFinite("actor loss".into()));
        }
        let mut policy = self.policy.clone();
        let mut policy_adam = self.policy_adam.clone();
        policy_adam.update(policy.net_mut(), &a.grads, T::of(self.config.actor_lr))?;

        critics.update_targets(T::of(self.config.polyak));

        self.critics = critics;
        self.q1_adam = q1_adam;
        self.q2_adam = q2_adam;
        self.policy = policy;
        self.policy_adam = policy_adam;
        if self.config.auto_alpha {
            self.update_temperature(a.mean_log_prob);
        }
        Ok(UpdateStats {
            critic_loss: c.loss,
            actor_loss: a.loss,
            alpha,
        })
    }

    /// Adam step on `log alpha` for `-log_alpha * (log pi + target_entropy)`.
    fn update_temperature(&mut self, mean_log_prob: T) {
        let g = -(mean_log_prob + self.target_entropy);
        if !g.is_finite() {
            return;
        }
        let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
        let (m, v, t) = &mut self.alpha_moments;
        *t += 1;
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / (T::one() - b1.powi(*t as i32));
        let v_hat = *v / (T::one() - b2.powi(*t as i32));
        self.log_alpha -= T::of(self.config.alpha_lr) * m_hat / (v_hat.sqrt() + eps);
    }
}
