//! Surrogate intensity `λ(φ) = λ0 + softplus(β − γ|φ|)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityHyper {
    pub lambda0: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for IntensityHyper {
    fn default() -> Self {
        Self {
            lambda0: 1e-4,
            beta: 0.0,
            gamma: 60.0,
        }
    }
}

impl IntensityHyper {
    /// Rate at zero residual, `λ0 + softplus(β)`.
    pub fn peak(&self) -> f64 {
        self.lambda0 + softplus(self.beta)
    }
}

/// `ln(1 + e^s)` without overflow for large `|s|`.
#[inline]
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    let e = (-s.abs()).exp();
    if s >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

/// `φ = L̂_now − L̂_last − p·C`.
#[inline]
pub fn residual(l_hat_now: f64, l_last: f64, polarity: f64, threshold: f64) -> f64 {
    l_hat_now - l_last - polarity * threshold
}

#[inline]
pub fn intensity(phi: f64, h: &IntensityHyper) -> f64 {
    h.lambda0 + softplus(h.beta - h.gamma * phi.abs())
}

/// `∂λ/∂φ = −γ σ(β − γ|φ|) sign(φ)` with `sign(0) = 0`.
#[inline]
pub fn intensity_dphi(phi: f64, h: &IntensityHyper) -> f64 {
    if phi == 0.0 {
        return 0.0;
    }
    -h.gamma * sigmoid(h.beta - h.gamma * phi.abs()) * phi.signum()
}

/// Intensity and its residual derivative sharing one exponential.
#[inline]
pub fn intensity_with_dphi(phi: f64, h: &IntensityHyper) -> (f64, f64) {
    let s = h.beta - h.gamma * phi.abs();
    let e = (-s.abs()).exp();
    let lambda = h.lambda0 + s.max(0.0) + e.ln_1p();
    if phi == 0.0 {
        return (lambda, 0.0);
    }
    let sig = if s >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    };
    (lambda, -h.gamma * sig * phi.signum())
}
