//! Pearson chi-squared divergence generator and its conjugates.
//!
//! `f(x) = (x - 1)^2`, with two flavours of conjugate:
//!
//! - unconstrained: `f*(y) = sup_x { xy - f(x) } = y (y/4 + 1)`
//! - nonneg: the supremum restricted to `x >= 0`, i.e. with
//!   `w(y) = max(0, (f')^{-1}(y))`, `f*(y) = w(y) y - f(w(y))`.
//!
//! The nonneg variant has derivative `w(y) >= 0` everywhere, which is what
//! makes the behavior-cloning weights non-negative.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    #[default]
    PearsonChi2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConjugateMode {
    #[default]
    Unconstrained,
    Nonneg,
}

impl ConjugateMode {
    pub fn name(self) -> &'static str {
        match self {
            ConjugateMode::Unconstrained => "unconstrained",
            ConjugateMode::Nonneg => "nonneg",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub conjugate: ConjugateMode,
}

impl DivergenceSpec {
    pub fn pearson(conjugate: ConjugateMode) -> Self {
        DivergenceSpec {
            kind: DivergenceKind::PearsonChi2,
            conjugate,
        }
    }

    pub fn f(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::PearsonChi2 => (x - 1.0) * (x - 1.0),
        }
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::PearsonChi2 => 2.0 * (x - 1.0),
        }
    }

    pub fn f_prime_inv(&self, r: f64) -> f64 {
        match self.kind {
            DivergenceKind::PearsonChi2 => r / 2.0 + 1.0,
        }
    }

    pub fn f_conj(&self, y: f64) -> f64 {
        match self.conjugate {
            ConjugateMode::Unconstrained => y * (y / 4.0 + 1.0),
            ConjugateMode::Nonneg => {
                let w = self.f_prime_inv(y).max(0.0);
                w * y - self.f(w)
            }
        }
    }

    /// Derivative of [`f_conj`](Self::f_conj). At the nonneg kink (`y = -2`)
    /// this returns the right derivative.
    pub fn f_conj_prime(&self, y: f64) -> f64 {
        match self.conjugate {
            ConjugateMode::Unconstrained => self.f_prime_inv(y),
            ConjugateMode::Nonneg => self.f_prime_inv(y).max(0.0),
        }
    }

    /// Weighted behavior-cloning coefficient for residual `r`.
    ///
    /// With `trick` the constant offset of `(f')^{-1}` is dropped, leaving
    /// `max(0, r)`.
    pub fn bc_weight(&self, r: f64, trick: bool) -> f64 {
        if trick {
            r.max(0.0)
        } else {
            self.f_prime_inv(r).max(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNC: DivergenceSpec = DivergenceSpec {
        kind: DivergenceKind::PearsonChi2,
        conjugate: ConjugateMode::Unconstrained,
    };
    const NN: DivergenceSpec = DivergenceSpec {
        kind: DivergenceKind::PearsonChi2,
        conjugate: ConjugateMode::Nonneg,
    };

    #[test]
    fn closed_form_values() {
        assert_eq!(UNC.f(1.0), 0.0);
        assert_eq!(UNC.f(2.0), 1.0);
        assert_eq!(UNC.f(0.0), 1.0);

        assert_eq!(UNC.f_conj(0.0), 0.0);
        assert_eq!(UNC.f_conj(2.0), 3.0);
        assert_eq!(NN.f_conj(-4.0), -1.0);
        assert_eq!(NN.f_conj(2.0), 3.0);

        assert_eq!(NN.f_conj_prime(-4.0), 0.0);
        assert_eq!(NN.f_conj_prime(0.0), 1.0);
        assert_eq!(UNC.f_conj_prime(2.0), 2.0);
        // right derivative at the kink
        assert_eq!(NN.f_conj_prime(-2.0), 0.0);

        assert_eq!(UNC.f_prime_inv(0.0), 1.0);
        assert_eq!(UNC.f_prime_inv(-2.0), 0.0);
        assert_eq!(UNC.f_prime_inv(2.0), 2.0);
    }

    #[test]
    fn bc_weights() {
        assert_eq!(UNC.bc_weight(-4.0, false), 0.0);
        assert_eq!(UNC.bc_weight(2.0, false), 2.0);
        assert_eq!(UNC.bc_weight(0.7, true), 0.7);
        assert_eq!(UNC.bc_weight(-0.7, true), 0.0);
    }

    #[test]
    fn f_prime_inverts_f_prime() {
        for i in -20..=20 {
            let x = i as f64 * 0.37;
            assert!((UNC.f_prime_inv(UNC.f_prime(x)) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn conj_prime_matches_finite_difference_of_unconstrained() {
        let h = 1e-5;
        let fd = (UNC.f_conj(2.0 + h) - UNC.f_conj(2.0 - h)) / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-8);
    }
}
