//! Latent vector fields.
//!
//! Estimation only needs three callbacks from a vector field: its value, its
//! state Jacobian and its parameter Jacobian. The stable-focus field used by
//! the synthetic experiment is one implementation.

use serde::{Deserialize, Serialize};

/// A parameterized, possibly time-dependent vector field `ẋ = f(x, t; θ)`.
///
/// Jacobians are written row-major into caller-provided buffers: the state
/// Jacobian is `n × n`, the parameter Jacobian `n × p`.
pub trait VectorField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn state_jacobian(&self, t: f64, x: &[f64], theta: &[f64], out: &mut [f64]);
    fn param_jacobian(&self, t: f64, x: &[f64], theta: &[f64], out: &mut [f64]);
}

/// Damping rate and angular rate of the stable focus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub alpha: f64,
    pub omega: f64,
}

impl DynamicsParams {
    pub fn new(alpha: f64, omega: f64) -> Self {
        Self { alpha, omega }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.alpha, self.omega]
    }

    pub fn from_slice(theta: &[f64]) -> Self {
        Self {
            alpha: theta[0],
            omega: theta[1],
        }
    }
}

/// `ẋ = -αx - ωy`, `ẏ = ωx - αy`. Autonomous and linear in the state.
#[derive(Debug, Clone, Copy, Default)]
pub struct StableFocus;

impl StableFocus {
    pub fn field(z: [f64; 2], p: DynamicsParams) -> [f64; 2] {
        [
            -p.alpha * z[0] - p.omega * z[1],
            p.omega * z[0] - p.alpha * z[1],
        ]
    }

    pub fn jacobian(p: DynamicsParams) -> [[f64; 2]; 2] {
        [[-p.alpha, -p.omega], [p.omega, -p.alpha]]
    }

    /// Columns `∂f/∂α = [-x, -y]` and `∂f/∂ω = [-y, x]`.
    pub fn param_grad(z: [f64; 2]) -> [[f64; 2]; 2] {
        [[-z[0], -z[1]], [-z[1], z[0]]]
    }
}

impl VectorField for StableFocus {
    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let f = Self::field([x[0], x[1]], DynamicsParams::from_slice(theta));
        out[..2].copy_from_slice(&f);
    }

    fn state_jacobian(&self, _t: f64, _x: &[f64], theta: &[f64], out: &mut [f64]) {
        let j = Self::jacobian(DynamicsParams::from_slice(theta));
        out[..4].copy_from_slice(&[j[0][0], j[0][1], j[1][0], j[1][1]]);
    }

    fn param_jacobian(&self, _t: f64, x: &[f64], _theta: &[f64], out: &mut [f64]) {
        // g[k] is the column for parameter k.
        let g = Self::param_grad([x[0], x[1]]);
        out[..4].copy_from_slice(&[g[0][0], g[1][0], g[0][1], g[1][1]]);
    }
}
