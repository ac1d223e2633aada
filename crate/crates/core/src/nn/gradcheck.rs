//! Central finite-difference gradient checking.

use crate::scalar::Scalar;

use super::{DenseNet, Gradients};

/// A scalar loss of a network's output with its analytic derivative.
pub trait ScalarLoss<T> {
    fn value(&self, output: &[T]) -> T;
    fn gradient(&self, output: &[T]) -> Vec<T>;
}

/// `sum_i (y_i - target_i)^2`
#[derive(Debug, Clone)]
pub struct SquaredError<T> {
    pub target: Vec<T>,
}

impl<T: Scalar> ScalarLoss<T> for SquaredError<T> {
    fn value(&self, output: &[T]) -> T {
        output.iter().zip(&self.target).map(|(&y, &t)| (y - t) * (y - t)).sum()
    }

    fn gradient(&self, output: &[T]) -> Vec<T> {
        output
            .iter()
            .zip(&self.target)
            .map(|(&y, &t)| T::of(2.0) * (y - t))
            .collect()
    }
}

/// `<weights, y>`, the scalar function whose gradient `backward` computes.
#[derive(Debug, Clone)]
pub struct Projection<T> {
    pub weights: Vec<T>,
}

impl<T: Scalar> ScalarLoss<T> for Projection<T> {
    fn value(&self, output: &[T]) -> T {
        output.iter().zip(&self.weights).map(|(&y, &w)| y * w).sum()
    }

    fn gradient(&self, _output: &[T]) -> Vec<T> {
        self.weights.clone()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let denom = analytic.abs().max(numeric.abs()).max(T::of(1e-8));
    (analytic - numeric).abs() / denom
}

pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> T {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(T::zero(), T::max)
}

/// Central differences of `f` around `params` with step `h`.
pub fn finite_difference<T: Scalar, F>(params: &[T], h: T, mut f: F) -> Vec<T>
where
    F: FnMut(&[T]) -> T,
{
    let mut probe = params.to_vec();
    let two_h = h + h;
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

pub fn analytic_gradients<T: Scalar, L: ScalarLoss<T>>(net: &DenseNet<T>, input: &[T], loss: &L) -> Gradients<T> {
    let out = net.forward(input).expect("input dimension");
    let (grads, _) = net
        .backward(input, &loss.gradient(&out))
        .expect("loss gradient dimension");
    grads
}

pub fn numeric_gradients<T: Scalar, L: ScalarLoss<T>>(net: &DenseNet<T>, input: &[T], loss: &L, h: T) -> Vec<T> {
    let mut probe = net.clone();
    finite_difference(&net.flat_params(), h, |p| {
        probe.set_flat_params(p).expect("same parameter count");
        loss.value(&probe.forward(input).expect("input dimension"))
    })
}

/// Maximum relative error between the analytic parameter gradient of
/// `loss(net(input))` and its central-difference estimate (`h = 1e-5`).
pub fn gradient_check<T: Scalar, L: ScalarLoss<T>>(net: &DenseNet<T>, input: &[T], loss: &L) -> T {
    let analytic = analytic_gradients(net, input, loss).flatten();
    let numeric = numeric_gradients(net, input, loss, T::of(1e-5));
    max_relative_error(&analytic, &numeric)
}
