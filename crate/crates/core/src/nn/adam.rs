use crate::error::{check_dim, MeeeError, Result};
use crate::scalar::Scalar;

use super::{DenseNet, Gradients};

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Gradients<T>,
    pub second_moment: Gradients<T>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with the usual `(0.9, 0.999, 1e-8)` coefficients.
    pub fn new(net: &DenseNet<T>) -> Self {
        Self::with_coefficients(net, T::of(0.9), T::of(0.999), T::of(1e-8))
    }

    pub fn with_coefficients(net: &DenseNet<T>, beta1: T, beta2: T, epsilon: T) -> Self {
        Self {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Applies one bias-corrected Adam step to `net`.
    ///
    /// Gradients are validated before anything is mutated; a non-finite
    /// entry leaves both the network and the state untouched.
    pub fn update(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>, learning_rate: T) -> Result<()> {
        if !(learning_rate > T::zero()) {
            return Err(MeeeError::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        check_dim("gradient layer count", net.layers().len(), grads.layers.len())?;
        for (idx, (p, g)) in net.layers().iter().zip(&grads.layers).enumerate() {
            check_dim("gradient weights", p.weights.len(), g.weights.len())?;
            check_dim("gradient biases", p.biases.len(), g.biases.len())?;
            if !g.weights.iter().chain(&g.biases).all(|x| x.is_finite()) {
                return Err(MeeeError::NonFinite(format!("gradient of layer {idx}")));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        let one = T::one();

        for (idx, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[idx];
            let m = &mut self.first_moment.layers[idx];
            let v = &mut self.second_moment.layers[idx];
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let gs = g.weights.iter().chain(&g.biases);
            let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
            let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
            for (((p, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            if !layer.is_finite() {
                return Err(MeeeError::NonFinite(format!("parameters of layer {idx} after update")));
            }
        }
        Ok(())
    }
}
