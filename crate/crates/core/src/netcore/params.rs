use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// All parameters of one network, flattened layer by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|x| scale * x).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

/// Soft target update: `tau * online + (1 - tau) * target`.
pub fn ema_update(target: &ParamVector, online: &ParamVector, tau: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::contract(format!("ema tau {tau} outside [0, 1]")));
    }
    if target.len() != online.len() {
        return Err(Error::DimensionMismatch {
            what: "ema online params",
            expected: target.len(),
            got: online.len(),
        });
    }
    Ok(ParamVector(
        target
            .iter()
            .zip(online.iter())
            .map(|(t, o)| tau * o + (1.0 - tau) * t)
            .collect(),
    ))
}
