//! Gradients of the windowed objective.
//!
//! [`adjoint_gradient`] runs the forward pass once, collecting the local
//! sensitivity of the objective to the state at every trajectory sample, and
//! then sweeps the discrete adjoint of the RK4 steps backward from `t_b`.
//! Event contributions enter as jumps of the adjoint at the event samples.
//! Threshold gradients never touch the adjoint because the trajectory does not
//! depend on the thresholds.
//!
//! [`finite_difference_gradient`] is the independent central-difference oracle.

use crate::error::{Error, Result};
use crate::ode::{rk4_step_vjp, Rk4Work};
use crate::point_process::window::{forward, ForwardOptions};
use crate::point_process::{window_nll, Model, Params, PixelSample, Window, WindowEval};

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub grad_theta: Vec<f64>,
    pub grad_psi: Vec<f64>,
    pub nll: f64,
    pub diagnostics: WindowEval,
}

impl GradReport {
    /// Flat layout matching [`Params::to_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.grad_theta.clone();
        v.extend_from_slice(&self.grad_psi);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointOptions {
    /// Negate the event jumps of the adjoint. Exists only so gradient checks
    /// can demonstrate that they catch a wrong sign.
    pub flip_event_jumps: bool,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            flip_event_jumps: false,
        }
    }
}

pub fn adjoint_gradient(
    model: &Model,
    window: &Window<'_>,
    params: &Params,
    sample: &PixelSample,
) -> Result<GradReport> {
    adjoint_gradient_with(model, window, params, sample, AdjointOptions::default())
}

pub fn adjoint_gradient_with(
    model: &Model,
    window: &Window<'_>,
    params: &Params,
    sample: &PixelSample,
    opts: AdjointOptions,
) -> Result<GradReport> {
    let fwd = forward(
        model,
        window,
        params,
        sample,
        ForwardOptions {
            local: true,
            event_jump_sign: if opts.flip_event_jumps { -1.0 } else { 1.0 },
        },
    )?;
    let local = fwd.local.expect("local sensitivities requested");
    let traj = &fwd.traj;
    let field = model.field.as_ref();
    let dim = traj.dim;
    let mut a = vec![0.0; dim];
    let mut grad_theta = vec![0.0; params.theta.len()];
    let mut work = Rk4Work::new(dim, params.theta.len());
    for i in (1..traj.len()).rev() {
        for j in 0..dim {
            a[j] += local.dz[i * dim + j];
        }
        let (t, h) = (traj.times[i - 1], traj.times[i] - traj.times[i - 1]);
        rk4_step_vjp(
            field,
            &params.theta,
            t,
            traj.state(i - 1),
            h,
            &mut a,
            &mut grad_theta,
            &mut work,
        );
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Gradient { t });
        }
    }
    // The initial state is a detached checkpoint, so `dz[0]` goes nowhere.
    let mut grad_psi = vec![0.0; params.psi.len()];
    model.coarse.pullback(&local.dc, &mut grad_psi);
    if grad_theta.iter().chain(&grad_psi).any(|v| !v.is_finite()) {
        return Err(Error::Gradient { t: window.t_a });
    }
    Ok(GradReport {
        grad_theta,
        grad_psi,
        nll: fwd.eval.nll,
        diagnostics: fwd.eval,
    })
}

/// Central differences of `f` at `x` with a fixed step.
pub fn central_differences<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        g.push((plus - minus) / (2.0 * step));
    }
    Ok(g)
}

/// Central-difference gradient of [`window_nll`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdGradient {
    /// Flat layout matching [`Params::to_vec`].
    pub grad: Vec<f64>,
    /// Components whose ±step probes put some event residual on opposite
    /// sides of zero. The objective has a kink in `|φ|` there, so the
    /// difference quotient does not estimate the derivative.
    pub kinked: Vec<bool>,
    pub nll: f64,
}

/// Central-difference gradient of [`window_nll`] over all parameters, with
/// the pixel sample held fixed.
pub fn finite_difference_gradient(
    model: &Model,
    window: &Window<'_>,
    params: &Params,
    sample: &PixelSample,
    step: f64,
) -> Result<FdGradient> {
    let x = params.to_vec();
    let mut probe = x.clone();
    let eval = |v: &[f64]| window_nll(model, window, &params.with_vec(v), sample);
    let mut grad = Vec::with_capacity(x.len());
    let mut kinked = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = eval(&probe)?;
        probe[i] = x[i] - step;
        let minus = eval(&probe)?;
        probe[i] = x[i];
        grad.push((plus.nll - minus.nll) / (2.0 * step));
        kinked.push(
            plus.residuals
                .iter()
                .zip(&minus.residuals)
                .any(|(p, m)| (*p > 0.0) != (*m > 0.0)),
        );
    }
    let nll = eval(&x)?.nll;
    Ok(FdGradient { grad, kinked, nll })
}

/// Componentwise relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_errors(a: &[f64], b: &[f64], floor: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).abs();
            if d == 0.0 {
                0.0
            } else {
                d / x.abs().max(y.abs()).max(floor)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_differences_on_quadratic() {
        // f(x) = Σ c_i x_i² + x_0 x_1; exact gradient known in closed form.
        let c = [1.5, -0.5, 3.0];
        let f = |x: &[f64]| -> Result<f64> {
            Ok(c.iter().zip(x).map(|(c, x)| c * x * x).sum::<f64>() + x[0] * x[1])
        };
        let x = [0.3, -1.2, 2.0];
        let exact = [
            2.0 * c[0] * x[0] + x[1],
            2.0 * c[1] * x[1] + x[0],
            2.0 * c[2] * x[2],
        ];
        let g = central_differences(f, &x, 1e-3).unwrap();
        for (a, b) in g.iter().zip(exact) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn richardson_slope_is_two() {
        // For a smooth non-quadratic function the central-difference error is
        // O(step²): halving the step quarters the change between estimates.
        let f = |x: &[f64]| -> Result<f64> { Ok((1.3 * x[0]).sin() * x[0].exp()) };
        let x = [0.4f64];
        let exact = 1.3 * (1.3 * x[0]).cos() * x[0].exp() + (1.3 * x[0]).sin() * x[0].exp();
        let steps = [0.08, 0.04, 0.02, 0.01];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&s| (central_differences(f, &x, s).unwrap()[0] - exact).abs())
            .collect();
        let n = steps.len() as f64;
        let lx: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
        let slope = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(
            relative_errors(&[1.0, 0.0, 1e-9], &[1.0, 0.0, 2e-9], 1e-6),
            vec![0.0, 0.0, 1e-3]
        );
    }
}
