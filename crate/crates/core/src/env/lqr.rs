//! Discounted linear-quadratic regulation on a point mass, with a Riccati
//! fixed-point solver that serves as the exact optimality oracle.

use rand::Rng;

use crate::error::{check_dim, MeeeError, Result};
use crate::scalar::Scalar;

use super::{EnvSpec, Environment, Matrix, StepOutcome};

/// `s' = A s + B a`, `r = -(s^T Q s + a^T R a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrParams<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub q: Matrix<T>,
    pub r: Matrix<T>,
    /// Initial states are uniform in `[-init_range, init_range]` per dimension.
    pub init_range: T,
    pub action_bound: T,
    pub max_episode_steps: usize,
}

impl<T: Scalar> LqrParams<T> {
    /// Velocity-controlled planar point mass: `A = B = Q = R = I`, actions in
    /// `[-1, 1]^2`, 200-step episodes.
    pub fn point_mass() -> Self {
        Self {
            a: Matrix::identity(2),
            b: Matrix::identity(2),
            q: Matrix::identity(2),
            r: Matrix::identity(2),
            init_range: T::one(),
            action_bound: T::one(),
            max_episode_steps: 200,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows
    }

    pub fn action_dim(&self) -> usize {
        self.b.cols
    }

    fn validate(&self) -> Result<()> {
        let n = self.a.rows;
        let m = self.b.cols;
        check_dim("LQR A columns", n, self.a.cols)?;
        check_dim("LQR B rows", n, self.b.rows)?;
        check_dim("LQR Q rows", n, self.q.rows)?;
        check_dim("LQR Q columns", n, self.q.cols)?;
        check_dim("LQR R rows", m, self.r.rows)?;
        check_dim("LQR R columns", m, self.r.cols)?;
        let tol = T::of(1e-12);
        if !self.q.is_symmetric(tol) || !self.q.is_positive_definite_shifted(tol) {
            return Err(MeeeError::InvalidArgument("LQR Q must be symmetric positive semidefinite".into()));
        }
        if !self.r.is_symmetric(tol) || !self.r.is_positive_definite_shifted(T::zero()) {
            return Err(MeeeError::InvalidArgument("LQR R must be symmetric positive definite".into()));
        }
        if !(self.init_range > T::zero() && self.action_bound > T::zero()) {
            return Err(MeeeError::InvalidArgument("LQR ranges must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LqrEnv<T> {
    params: LqrParams<T>,
    spec: EnvSpec<T>,
}

impl<T: Scalar> LqrEnv<T> {
    pub fn new(params: LqrParams<T>) -> Result<Self> {
        params.validate()?;
        let m = params.action_dim();
        let spec = EnvSpec::new(
            params.state_dim(),
            vec![-params.action_bound; m],
            vec![params.action_bound; m],
            params.max_episode_steps,
            false,
        )?;
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> &LqrParams<T> {
        &self.params
    }

    pub fn reward(&self, state: &[T], action: &[T]) -> T {
        -(self.params.q.quadratic_form(state) + self.params.r.quadratic_form(action))
    }
}

impl<T: Scalar> Environment<T> for LqrEnv<T> {
    fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let range = self.params.init_range.as_f64();
        (0..self.spec.state_dim)
            .map(|_| T::of(rng.random_range(-range..=range)))
            .collect()
    }

    fn step(&self, state: &[T], action: &[T]) -> Result<StepOutcome<T>> {
        self.spec.check_state(state)?;
        self.spec.check_action(action)?;
        let reward = self.reward(state, action);
        let next_state = self
            .params
            .a
            .matvec(state)
            .into_iter()
            .zip(self.params.b.matvec(action))
            .map(|(x, u)| x + u)
            .collect();
        Ok(StepOutcome {
            next_state,
            reward,
            done: false,
        })
    }

    fn is_terminal(&self, state: &[T]) -> Result<bool> {
        self.spec.check_state(state)?;
        Ok(false)
    }

    /// States stay within the box reachable from the initial range in one
    /// episode: `b_{t+1} = |A|_inf b_t + |B|_inf u_max`.
    fn reward_bounds(&self) -> (T, T) {
        let p = &self.params;
        let a_norm = p.a.inf_norm();
        let b_norm = p.b.inf_norm();
        let mut bound = p.init_range;
        let mut worst = bound;
        for _ in 0..p.max_episode_steps {
            bound = a_norm * bound + b_norm * p.action_bound;
            worst = worst.max(bound);
        }
        let cost = p.q.abs_sum() * worst * worst + p.r.abs_sum() * p.action_bound * p.action_bound;
        (-cost, T::zero())
    }
}

/// Optimal discounted LQR solution: the policy `a = -K s` is optimal and
/// `V(s) = -s^T P s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution<T> {
    pub gain: Matrix<T>,
    pub value: Matrix<T>,
    pub iterations: usize,
    pub residual: T,
}

impl<T: Scalar> LqrSolution<T> {
    pub fn action(&self, state: &[T]) -> Vec<T> {
        self.gain.matvec(state).into_iter().map(|x| -x).collect()
    }

    pub fn state_value(&self, state: &[T]) -> T {
        -self.value.quadratic_form(state)
    }
}

const MAX_RICCATI_ITERATIONS: usize = 1_000_000;

/// One application of the discounted Riccati map
/// `P -> Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA`, returning the new
/// `P` and the gain `K = g (R + g B'PB)^-1 B'PA`.
fn riccati_map<T: Scalar>(p: &LqrParams<T>, value: &Matrix<T>, gamma: T) -> Result<(Matrix<T>, Matrix<T>)> {
    let at = p.a.transpose();
    let bt = p.b.transpose();
    let pa = value.matmul(&p.a);
    let pb = value.matmul(&p.b);
    let gram = p.r.add(&bt.matmul(&pb).scale(gamma));
    let bpa = bt.matmul(&pa);
    let gain = gram.inverse()?.matmul(&bpa).scale(gamma);
    // A'PA - A'PB K  (one factor of gamma is inside the gain)
    let next = p
        .q
        .add(&at.matmul(&pa).sub(&at.matmul(&pb).matmul(&gain)).scale(gamma));
    Ok((next, gain))
}

/// Solves the discounted Riccati fixed point by value iteration until
/// successive iterates agree to 1e-10 (elementwise), then verifies the
/// residual is below 1e-9.
pub fn lqr_optimal_value<T: Scalar>(params: &LqrParams<T>, gamma: T) -> Result<LqrSolution<T>> {
    params.validate()?;
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(MeeeError::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let tol = T::of(1e-10);
    let mut value = params.q.clone();
    for iter in 1..=MAX_RICCATI_ITERATIONS {
        let (next, _) = riccati_map(params, &value, gamma)?;
        if !next.data.iter().all(|x| x.is_finite()) {
            return Err(MeeeError::NonConvergence(iter));
        }
        let delta = next.sub(&value).max_abs();
        value = next;
        if delta < tol {
            let (check, gain) = riccati_map(params, &value, gamma)?;
            let residual = check.sub(&value).max_abs();
            if residual >= T::of(1e-9) {
                return Err(MeeeError::NonConvergence(iter));
            }
            return Ok(LqrSolution {
                gain,
                value,
                iterations: iter,
                residual,
            });
        }
    }
    Err(MeeeError::NonConvergence(MAX_RICCATI_ITERATIONS))
}
