//! Probabilistic dynamics ensemble.
//!
//! Each member maps `(s, a)` to a diagonal Gaussian over the standardized
//! target `(s' - s, r)`. Members are initialized from distinct seeds and
//! trained independently. Their disagreement (the unbiased variance of the
//! member means) is the uncertainty signal used for exploration bonuses and
//! for down-weighting imagined transitions.

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::EnvBuffer;
use crate::env::Transition;
use crate::error::{check_dim, MeeeError, Result};
use crate::nn::{mlp_sizes, Activation, AdamState, DenseNet, Gradients};
use crate::random::{rng_from_seed, NoiseSource};
use crate::scalar::{all_finite, sigmoid, Scalar};

/// Log-variance outputs are clamped to this range before exponentiation.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 4.0;

const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelLoss {
    /// Squared error against a reparametrized sample `mu + sigma * z`.
    #[default]
    Mse,
    /// Gaussian negative log-likelihood (constants dropped).
    Nll,
}

/// Per-dimension affine standardization of model inputs `(s, a)` and
/// targets `(s' - s, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<T> {
    pub input_mean: Vec<T>,
    pub input_std: Vec<T>,
    pub target_mean: Vec<T>,
    pub target_std: Vec<T>,
}

impl<T: Scalar> Normalizer<T> {
    pub fn identity(input_dim: usize, target_dim: usize) -> Self {
        Self {
            input_mean: vec![T::zero(); input_dim],
            input_std: vec![T::one(); input_dim],
            target_mean: vec![T::zero(); target_dim],
            target_std: vec![T::one(); target_dim],
        }
    }

    /// Mean and standard deviation of every input and target dimension over
    /// the buffer contents. Degenerate dimensions get unit scale.
    pub fn fit<'a>(transitions: impl IntoIterator<Item = &'a Transition<T>>) -> Result<Self> {
        let (inputs, targets): (Vec<_>, Vec<_>) = transitions
            .into_iter()
            .map(|t| (model_input(&t.s, &t.a), model_target(t)))
            .unzip();
        if inputs.is_empty() {
            return Err(MeeeError::EmptyBuffer);
        }
        let (input_mean, input_std) = column_stats(&inputs);
        let (target_mean, target_std) = column_stats(&targets);
        Ok(Self {
            input_mean,
            input_std,
            target_mean,
            target_std,
        })
    }

    pub fn normalize_input(&self, raw: &[T]) -> Vec<T> {
        raw.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn normalize_target(&self, raw: &[T]) -> Vec<T> {
        raw.iter()
            .zip(self.target_mean.iter().zip(&self.target_std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize_target(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(self.target_mean.iter().zip(&self.target_std))
            .map(|(&x, (&m, &s))| x * s + m)
            .collect()
    }
}

fn column_stats<T: Scalar>(rows: &[Vec<T>]) -> (Vec<T>, Vec<T>) {
    let n = T::from_usize(rows.len()).unwrap();
    let dim = rows[0].len();
    let mean: Vec<T> = (0..dim).map(|d| rows.iter().map(|r| r[d]).sum::<T>() / n).collect();
    let std = (0..dim)
        .map(|d| {
            let var = rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<T>() / n;
            let s = var.sqrt();
            if s > T::of(STD_FLOOR) {
                s
            } else {
                T::one()
            }
        })
        .collect();
    (mean, std)
}

pub(crate) fn model_input<T: Scalar>(s: &[T], a: &[T]) -> Vec<T> {
    s.iter().chain(a).copied().collect()
}

pub(crate) fn model_target<T: Scalar>(t: &Transition<T>) -> Vec<T> {
    let mut y: Vec<T> = t.s_next.iter().zip(&t.s).map(|(&n, &s)| n - s).collect();
    y.push(t.r);
    y
}

/// Mean and diagonal variance over `(s' - s, r)` in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ProbabilisticModel<T> {
    net: DenseNet<T>,
    adam: AdamState<T>,
    init_seed: u64,
    state_dim: usize,
    action_dim: usize,
    normalizer: Normalizer<T>,
}

impl<T: Scalar> ProbabilisticModel<T> {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        init_seed: u64,
    ) -> Result<Self> {
        let sizes = mlp_sizes(state_dim + action_dim, hidden, hidden_layers, 2 * (state_dim + 1));
        let net = DenseNet::new(&sizes, activation, init_seed)?;
        Self::from_net(net, state_dim, action_dim, init_seed)
    }

    /// Wraps an existing network whose output is `(mean, log-variance)` over
    /// `state_dim + 1` targets.
    pub fn from_net(net: DenseNet<T>, state_dim: usize, action_dim: usize, init_seed: u64) -> Result<Self> {
        check_dim("model input", state_dim + action_dim, net.input_dim())?;
        check_dim("model output", 2 * (state_dim + 1), net.output_dim())?;
        let adam = AdamState::new(&net);
        Ok(Self {
            net,
            adam,
            init_seed,
            state_dim,
            action_dim,
            normalizer: Normalizer::identity(state_dim + action_dim, state_dim + 1),
        })
    }

    pub fn net(&self) -> &DenseNet<T> {
        &self.net
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn target_dim(&self) -> usize {
        self.state_dim + 1
    }

    pub fn normalizer(&self) -> &Normalizer<T> {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer<T>) -> Result<()> {
        check_dim("normalizer inputs", self.state_dim + self.action_dim, normalizer.input_mean.len())?;
        check_dim("normalizer targets", self.target_dim(), normalizer.target_mean.len())?;
        self.normalizer = normalizer;
        Ok(())
    }

    fn standardized_output(&self, s: &[T], a: &[T]) -> Result<Vec<T>> {
        check_dim("model state", self.state_dim, s.len())?;
        check_dim("model action", self.action_dim, a.len())?;
        self.net.forward(&self.normalizer.normalize_input(&model_input(s, a)))
    }

    /// Standardized mean head, the quantity whose spread across members
    /// defines the ensemble disagreement.
    pub fn standardized_mean(&self, s: &[T], a: &[T]) -> Result<Vec<T>> {
        let mut out = self.standardized_output(s, a)?;
        out.truncate(self.target_dim());
        Ok(out)
    }

    /// Deterministic mean of `(s' - s, r)` in raw units.
    pub fn predict_mean(&self, s: &[T], a: &[T]) -> Result<Vec<T>> {
        Ok(self.normalizer.denormalize_target(&self.standardized_mean(s, a)?))
    }

    pub fn predict_distribution(&self, s: &[T], a: &[T]) -> Result<GaussianPrediction<T>> {
        let out = self.standardized_output(s, a)?;
        let d = self.target_dim();
        let mean = self.normalizer.denormalize_target(&out[..d]);
        let variance = out[d..]
            .iter()
            .zip(&self.normalizer.target_std)
            .map(|(&lv, &sd)| clamp_log_var(lv).exp() * sd * sd)
            .collect();
        Ok(GaussianPrediction { mean, variance })
    }

    /// Samples `(s', r)` as `s + mean_delta + sigma * z` with fresh `z`.
    pub fn predict<N: NoiseSource + ?Sized>(&self, s: &[T], a: &[T], noise: &mut N) -> Result<(Vec<T>, T)> {
        let out = self.standardized_output(s, a)?;
        let d = self.target_dim();
        let sample: Vec<T> = (0..d)
            .map(|i| out[i] + (T::of(0.5) * clamp_log_var(out[d + i])).exp() * noise.standard_normal::<T>())
            .collect();
        let raw = self.normalizer.denormalize_target(&sample);
        let next: Vec<T> = s.iter().zip(&raw).map(|(&x, &dx)| x + dx).collect();
        let r = raw[self.state_dim];
        if !all_finite(&next) || !r.is_finite() {
            return Err(MeeeError::NonFinite("model prediction".into()));
        }
        Ok((next, r))
    }

    /// Mean minibatch loss and its parameter gradient for explicit,
    /// already standardized `(input, target)` pairs and per-sample noise
    /// vectors (ignored for the likelihood loss).
    pub fn loss_and_gradients(
        &self,
        inputs: &[&[T]],
        targets: &[&[T]],
        noise: &[Vec<T>],
        loss: ModelLoss,
    ) -> Result<(T, Gradients<T>)> {
        let d = self.target_dim();
        let n = T::from_usize(inputs.len()).unwrap();
        let mut grads = Gradients::zeros_like(&self.net);
        let mut total = T::zero();
        let lo = T::of(LOG_VAR_MIN);
        let hi = T::of(LOG_VAR_MAX);
        let two = T::of(2.0);
        let half = T::of(0.5);
        for (j, (x, y)) in inputs.iter().zip(targets).enumerate() {
            check_dim("model target", d, y.len())?;
            let trace = self.net.forward_trace(x)?;
            let out = trace.output();
            let mut upstream = vec![T::zero(); 2 * d];
            for i in 0..d {
                let mu = out[i];
                let raw_lv = out[d + i];
                let lv = raw_lv.max(lo).min(hi);
                let lv_active = raw_lv > lo && raw_lv < hi;
                match loss {
                    ModelLoss::Mse => {
                        let sigma = (half * lv).exp();
                        let z = noise[j][i];
                        let resid = y[i] - (mu + sigma * z);
                        total += resid * resid;
                        upstream[i] = -two * resid / n;
                        if lv_active {
                            upstream[d + i] = -two * resid * z * half * sigma / n;
                        }
                    }
                    ModelLoss::Nll => {
                        let inv_var = (-lv).exp();
                        let resid = y[i] - mu;
                        total += resid * resid * inv_var + lv;
                        upstream[i] = -two * resid * inv_var / n;
                        if lv_active {
                            upstream[d + i] = (T::one() - resid * resid * inv_var) / n;
                        }
                    }
                }
            }
            self.net.backward_trace(&trace, &upstream, Some(&mut grads), false)?;
        }
        Ok((total / n, grads))
    }

    /// Trains this member alone on standardized pairs for `epochs` passes,
    /// returning the mean minibatch loss of each pass. Minibatch order and
    /// reparametrization noise come from a generator seeded with `seed`.
    pub fn train(
        &mut self,
        data: &[(Vec<T>, Vec<T>)],
        epochs: usize,
        batch_size: usize,
        learning_rate: T,
        loss: ModelLoss,
        seed: u64,
    ) -> Result<Vec<T>> {
        if batch_size == 0 || data.len() < batch_size {
            return Err(MeeeError::InsufficientData {
                needed: batch_size.max(1),
                available: data.len(),
            });
        }
        let mut rng = rng_from_seed(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut trace = Vec::with_capacity(epochs);
        let d = self.target_dim();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = T::zero();
            let mut batches = 0usize;
            for chunk in order.chunks(batch_size) {
                let inputs: Vec<&[T]> = chunk.iter().map(|&i| data[i].0.as_slice()).collect();
                let targets: Vec<&[T]> = chunk.iter().map(|&i| data[i].1.as_slice()).collect();
                let noise: Vec<Vec<T>> = match loss {
                    ModelLoss::Mse => chunk
                        .iter()
                        .map(|_| (0..d).map(|_| rng.standard_normal::<T>()).collect())
                        .collect(),
                    ModelLoss::Nll => Vec::new(),
                };
                let (l, grads) = self.loss_and_gradients(&inputs, &targets, &noise, loss)?;
                if !l.is_finite() {
                    return Err(MeeeError::NonFinite(format!("loss of model seeded {}", self.init_seed)));
                }
                self.adam.update(&mut self.net, &grads, learning_rate)?;
                epoch_loss += l;
                batches += 1;
            }
            trace.push(epoch_loss / T::from_usize(batches).unwrap());
        }
        Ok(trace)
    }
}

fn clamp_log_var<T: Scalar>(lv: T) -> T {
    lv.max(T::of(LOG_VAR_MIN)).min(T::of(LOG_VAR_MAX))
}

/// Unbiased (denominator `I - 1`) variance across members of each output
/// dimension, averaged over dimensions. Computed with Welford's update.
pub fn mean_disagreement<T: Scalar>(member_means: &[Vec<T>]) -> T {
    let members = member_means.len();
    assert!(members >= 2, "disagreement needs at least two members");
    let dims = member_means[0].len();
    let mut mean = vec![T::zero(); dims];
    let mut m2 = vec![T::zero(); dims];
    for (k, row) in member_means.iter().enumerate() {
        let count = T::from_usize(k + 1).unwrap();
        for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
            let delta = x - *m;
            *m += delta / count;
            *s += delta * (x - *m);
        }
    }
    let denom = T::from_usize(members - 1).unwrap();
    let total: T = m2.iter().map(|&s| (s / denom).max(T::zero())).sum();
    total / T::from_usize(dims).unwrap()
}

/// `sigmoid(-variance * temperature) + 0.5`, in `[0.5, 1.0]`.
pub fn uncertainty_weight<T: Scalar>(variance: T, temperature: T) -> Result<T> {
    if variance.is_nan() || variance < T::zero() {
        return Err(MeeeError::InvalidArgument(format!(
            "ensemble variance must be nonnegative, got {variance}"
        )));
    }
    if !(temperature > T::zero()) {
        return Err(MeeeError::InvalidArgument(format!(
            "weight temperature must be positive, got {temperature}"
        )));
    }
    Ok(sigmoid(-variance * temperature) + T::of(0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub learning_rate: f64,
    pub loss: ModelLoss,
    pub include_reward_in_variance: bool,
    pub parallel: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            loss: ModelLoss::Mse,
            include_reward_in_variance: true,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble<T> {
    members: Vec<ProbabilisticModel<T>>,
    config: EnsembleConfig,
}

impl<T: Scalar> Ensemble<T> {
    /// `size` members with init seeds `base_seed, base_seed + 1, ...`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        size: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        base_seed: u64,
        config: EnsembleConfig,
    ) -> Result<Self> {
        let members = (0..size)
            .map(|i| {
                ProbabilisticModel::new(
                    state_dim,
                    action_dim,
                    hidden,
                    hidden_layers,
                    activation,
                    base_seed.wrapping_add(i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(members, config)
    }

    pub fn from_members(members: Vec<ProbabilisticModel<T>>, config: EnsembleConfig) -> Result<Self> {
        if members.len() < 2 {
            return Err(MeeeError::InvalidArgument(format!(
                "ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        let (sd, ad) = (members[0].state_dim, members[0].action_dim);
        for m in &members {
            check_dim("ensemble member state", sd, m.state_dim)?;
            check_dim("ensemble member action", ad, m.action_dim)?;
        }
        Ok(Self { members, config })
    }

    pub fn members(&self) -> &[ProbabilisticModel<T>] {
        &self.members
    }

    pub fn member(&self, i: usize) -> &ProbabilisticModel<T> {
        &self.members[i]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.config.parallel = parallel;
    }

    pub fn state_dim(&self) -> usize {
        self.members[0].state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.members[0].action_dim
    }

    pub fn normalizer(&self) -> &Normalizer<T> {
        &self.members[0].normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer<T>) -> Result<()> {
        for m in &mut self.members {
            m.set_normalizer(normalizer.clone())?;
        }
        Ok(())
    }

    /// Refits the input/target standardization to the current buffer,
    /// trains every member for `epochs` passes over it, and returns each
    /// member's per-epoch loss trace.
    ///
    /// Member `i` draws its minibatch order and noise from seed
    /// `base + i`, where `base` is drawn from `rng`; parallel and sequential
    /// execution therefore produce identical parameters.
    pub fn train<R: RngCore + ?Sized>(
        &mut self,
        buffer: &EnvBuffer<T>,
        epochs: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<T>>> {
        if buffer.len() < batch_size.max(1) {
            return Err(MeeeError::InsufficientData {
                needed: batch_size.max(1),
                available: buffer.len(),
            });
        }
        let normalizer = Normalizer::fit(buffer.iter())?;
        self.set_normalizer(normalizer.clone())?;
        let data: Vec<(Vec<T>, Vec<T>)> = buffer
            .iter()
            .map(|t| {
                (
                    normalizer.normalize_input(&model_input(&t.s, &t.a)),
                    normalizer.normalize_target(&model_target(t)),
                )
            })
            .collect();
        let base = rng.next_u64();
        let lr = T::of(self.config.learning_rate);
        let loss = self.config.loss;
        let train_one = |(i, m): (usize, &mut ProbabilisticModel<T>)| {
            m.train(&data, epochs, batch_size, lr, loss, base.wrapping_add(i as u64))
                .map_err(|e| match e {
                    MeeeError::NonFinite(what) => MeeeError::NonFinite(format!("ensemble member {i}: {what}")),
                    other => other,
                })
        };
        if self.config.parallel {
            self.members.par_iter_mut().enumerate().map(train_one).collect()
        } else {
            self.members.iter_mut().enumerate().map(train_one).collect()
        }
    }

    /// Standardized mean prediction of every member.
    pub fn member_means(&self, s: &[T], a: &[T]) -> Result<Vec<Vec<T>>> {
        self.members.iter().map(|m| m.standardized_mean(s, a)).collect()
    }

    /// Ensemble disagreement at `(s, a)`: unbiased variance of the members'
    /// standardized mean predictions, averaged over output dimensions
    /// (state-delta dimensions only when the reward is excluded).
    pub fn variance(&self, s: &[T], a: &[T]) -> Result<T> {
        let mut means = self.member_means(s, a)?;
        if !self.config.include_reward_in_variance {
            let sd = self.state_dim();
            for m in &mut means {
                m.truncate(sd);
            }
        }
        Ok(mean_disagreement(&means))
    }

    /// Index of a uniformly drawn member.
    pub fn sample_member<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.members.len())
    }
}
