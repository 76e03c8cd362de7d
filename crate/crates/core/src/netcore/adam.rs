use crate::error::{Error, Result};

use super::ParamVector;

/// First/second moment estimates for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self::with_hyperparams(dim, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(dim: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Applies one descent step in place.
    ///
    /// The gradient is checked before any state is touched, so a rejected
    /// step leaves both `self` and `params` unchanged.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        if params.len() != self.dim() || grad.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "adam step",
                expected: self.dim(),
                got: if params.len() != self.dim() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::contract(format!("learning rate {lr} must be finite and >= 0")));
        }
        if let Some(idx) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {idx} = {} at adam step {}",
                grad[idx],
                self.step + 1
            )));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..self.dim() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &ParamVector,
    grad: &ParamVector,
    lr: f64,
) -> Result<(ParamVector, AdamState)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.step(&mut params, grad, lr)?;
    Ok((params, state))
}
