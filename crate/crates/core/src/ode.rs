//! Fixed-step classical RK4 with exact stop times, the compensator-augmented
//! variant and the reverse (vector-Jacobian) pass through a single step.

use crate::dynamics::VectorField;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt_max: f64,
    pub scheme: Scheme,
}

impl IntegratorConfig {
    pub fn new(dt_max: f64) -> Result<Self> {
        if !(dt_max > 0.0 && dt_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dt_max must be positive, got {dt_max}"
            )));
        }
        Ok(Self {
            dt_max,
            scheme: Scheme::Rk4,
        })
    }

    /// Four steps per frame interval.
    pub fn for_fps(fps: f64) -> Self {
        Self {
            dt_max: 1.0 / (4.0 * fps),
            scheme: Scheme::Rk4,
        }
    }
}

/// States sampled at every step boundary, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Index of a sample whose time equals `t` bit for bit.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t);
        (i < self.times.len() && self.times[i] == t).then_some(i)
    }
}

/// Scratch buffers for one RK4 step.
pub struct Rk4Work {
    k: [Vec<f64>; 4],
    y: Vec<f64>,
    jac: Vec<f64>,
    pjac: Vec<f64>,
    bar_k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub fn new(dim: usize, params: usize) -> Self {
        let v = || vec![0.0; dim];
        Self {
            k: [v(), v(), v(), v()],
            y: v(),
            jac: vec![0.0; dim * dim],
            pjac: vec![0.0; dim * params],
            bar_k: [v(), v(), v(), v()],
            tmp: v(),
        }
    }
}

/// Stage states of one RK4 step are `x`, `x + h/2 k1`, `x + h/2 k2`, `x + h k3`.
fn rk4_stages<F: VectorField + ?Sized>(
    field: &F,
    theta: &[f64],
    t: f64,
    x: &[f64],
    h: f64,
    w: &mut Rk4Work,
) {
    let n = x.len();
    field.eval(t, x, theta, &mut w.k[0]);
    for i in 0..n {
        w.y[i] = x[i] + 0.5 * h * w.k[0][i];
    }
    field.eval(t + 0.5 * h, &w.y, theta, &mut w.k[1]);
    for i in 0..n {
        w.y[i] = x[i] + 0.5 * h * w.k[1][i];
    }
    field.eval(t + 0.5 * h, &w.y, theta, &mut w.k[2]);
    for i in 0..n {
        w.y[i] = x[i] + h * w.k[2][i];
    }
    field.eval(t + h, &w.y, theta, &mut w.k[3]);
}

pub fn rk4_step<F: VectorField + ?Sized>(
    field: &F,
    theta: &[f64],
    t: f64,
    x: &[f64],
    h: f64,
    out: &mut [f64],
    w: &mut Rk4Work,
) {
    rk4_stages(field, theta, t, x, h, w);
    for i in 0..x.len() {
        out[i] = x[i] + h / 6.0 * (w.k[0][i] + 2.0 * w.k[1][i] + 2.0 * w.k[2][i] + w.k[3][i]);
    }
}

/// Reverse pass through one RK4 step.
///
/// On entry `adj` holds `∂ℓ/∂x_{n+1}`; on exit it holds `∂ℓ/∂x_n`.
/// `grad_theta` accumulates the step's contribution to `∂ℓ/∂θ`.
pub fn rk4_step_vjp<F: VectorField + ?Sized>(
    field: &F,
    theta: &[f64],
    t: f64,
    x: &[f64],
    h: f64,
    adj: &mut [f64],
    grad_theta: &mut [f64],
    w: &mut Rk4Work,
) {
    let n = x.len();
    let p = theta.len();
    rk4_stages(field, theta, t, x, h, w);
    for i in 0..n {
        w.bar_k[0][i] = h / 6.0 * adj[i];
        w.bar_k[1][i] = h / 3.0 * adj[i];
        w.bar_k[2][i] = h / 3.0 * adj[i];
        w.bar_k[3][i] = h / 6.0 * adj[i];
    }
    // Stages 4, 3, 2: stage input y_s = x + c_s h k_{s-1}.
    let stage_time = [t, t + 0.5 * h, t + 0.5 * h, t + h];
    let stage_coef = [0.0, 0.5 * h, 0.5 * h, h];
    for s in (1..4).rev() {
        for i in 0..n {
            w.y[i] = x[i] + stage_coef[s] * w.k[s - 1][i];
        }
        field.state_jacobian(stage_time[s], &w.y, theta, &mut w.jac);
        field.param_jacobian(stage_time[s], &w.y, theta, &mut w.pjac);
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += w.jac[i * n + j] * w.bar_k[s][i];
            }
            w.tmp[j] = acc;
        }
        for q in 0..p {
            let mut acc = 0.0;
            for i in 0..n {
                acc += w.pjac[i * p + q] * w.bar_k[s][i];
            }
            grad_theta[q] += acc;
        }
        for j in 0..n {
            adj[j] += w.tmp[j];
            w.bar_k[s - 1][j] += stage_coef[s] * w.tmp[j];
        }
    }
    field.state_jacobian(t, x, theta, &mut w.jac);
    field.param_jacobian(t, x, theta, &mut w.pjac);
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += w.jac[i * n + j] * w.bar_k[0][i];
        }
        w.tmp[j] = acc;
    }
    for q in 0..p {
        let mut acc = 0.0;
        for i in 0..n {
            acc += w.pjac[i * p + q] * w.bar_k[0][i];
        }
        grad_theta[q] += acc;
    }
    for j in 0..n {
        adj[j] += w.tmp[j];
    }
}

/// Step boundaries on `[t_a, t_b]`: every stop is a boundary and the gaps
/// between stops are split into equal steps no longer than `dt_max`.
pub fn step_grid(t_a: f64, t_b: f64, dt_max: f64, stops: &[f64]) -> Vec<f64> {
    let mut knots = Vec::with_capacity(stops.len() + 2);
    knots.push(t_a);
    for &s in stops {
        if s > *knots.last().unwrap() && s < t_b {
            knots.push(s);
        }
    }
    if t_b > t_a {
        knots.push(t_b);
    }
    let mut grid = Vec::with_capacity(knots.len());
    grid.push(t_a);
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let k = ((b - a) / dt_max).ceil().max(1.0) as usize;
        for i in 1..k {
            grid.push(a + (b - a) * i as f64 / k as f64);
        }
        grid.push(b);
    }
    grid
}

fn check_span(t_a: f64, t_b: f64, stops: &[f64]) -> Result<()> {
    if !(t_a <= t_b) {
        return Err(Error::InvalidConfig(format!(
            "integration span [{t_a}, {t_b}] is reversed"
        )));
    }
    if stops.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig(
            "stop times must be sorted".to_string(),
        ));
    }
    if let (Some(&first), Some(&last)) = (stops.first(), stops.last()) {
        if first < t_a || last > t_b {
            return Err(Error::InvalidConfig(format!(
                "stop times must lie in [{t_a}, {t_b}]"
            )));
        }
    }
    Ok(())
}

/// Integrate `ẋ = f(x, t; θ)` from `x0` at `t_a` to `t_b`, returning the
/// state at every step boundary. Each stop time appears bit-exactly in the
/// returned `times`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    theta: &[f64],
    x0: &[f64],
    t_a: f64,
    t_b: f64,
    cfg: &IntegratorConfig,
    stops: &[f64],
) -> Result<Trajectory> {
    check_span(t_a, t_b, stops)?;
    let grid = step_grid(t_a, t_b, cfg.dt_max, stops);
    integrate_on_grid(field, theta, x0, grid)
}

/// Integrate over precomputed step boundaries (`grid[0]` is the start time).
pub fn integrate_on_grid<F: VectorField + ?Sized>(
    field: &F,
    theta: &[f64],
    x0: &[f64],
    grid: Vec<f64>,
) -> Result<Trajectory> {
    let n = x0.len();
    let mut states = Vec::with_capacity(grid.len() * n);
    states.extend_from_slice(x0);
    let mut w = Rk4Work::new(n, theta.len());
    let mut next = vec![0.0; n];
    for i in 1..grid.len() {
        let (t, h) = (grid[i - 1], grid[i] - grid[i - 1]);
        rk4_step(
            field,
            theta,
            t,
            &states[(i - 1) * n..i * n],
            h,
            &mut next,
            &mut w,
        );
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t: grid[i] });
        }
        states.extend_from_slice(&next);
    }
    Ok(Trajectory {
        dim: n,
        times: grid,
        states,
    })
}

/// Latent state together with the running integral of a nonnegative rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub z: Vec<f64>,
    pub comp: f64,
}

/// Integrate the ODE augmented with `ċomp = rate(t, x)`.
///
/// The rate is evaluated at the RK4 stage states and accumulated with the
/// RK4 weights, so the auxiliary state shares the step grid of `x`.
/// `rate` may depend on which stop interval is active (it is called with the
/// index of the step's left boundary in the returned grid).
pub fn integrate_augmented<F, R>(
    field: &F,
    theta: &[f64],
    x0: &[f64],
    t_a: f64,
    t_b: f64,
    cfg: &IntegratorConfig,
    stops: &[f64],
    mut rate: R,
) -> Result<(Trajectory, Vec<f64>)>
where
    F: VectorField + ?Sized,
    R: FnMut(usize, f64, &[f64]) -> f64,
{
    check_span(t_a, t_b, stops)?;
    let grid = step_grid(t_a, t_b, cfg.dt_max, stops);
    let n = x0.len();
    let mut w = Rk4Work::new(n, theta.len());
    let mut states = Vec::with_capacity(grid.len() * n);
    states.extend_from_slice(x0);
    let mut comp = Vec::with_capacity(grid.len());
    comp.push(0.0);
    let mut next = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 1..grid.len() {
        let (t, h) = (grid[i - 1], grid[i] - grid[i - 1]);
        let x = states[(i - 1) * n..i * n].to_vec();
        rk4_stages(field, theta, t, &x, h, &mut w);
        let r1 = rate(i - 1, t, &x);
        for j in 0..n {
            y[j] = x[j] + 0.5 * h * w.k[0][j];
        }
        let r2 = rate(i - 1, t + 0.5 * h, &y);
        for j in 0..n {
            y[j] = x[j] + 0.5 * h * w.k[1][j];
        }
        let r3 = rate(i - 1, t + 0.5 * h, &y);
        for j in 0..n {
            y[j] = x[j] + h * w.k[2][j];
        }
        let r4 = rate(i - 1, t + h, &y);
        for j in 0..n {
            next[j] = x[j] + h / 6.0 * (w.k[0][j] + 2.0 * w.k[1][j] + 2.0 * w.k[2][j] + w.k[3][j]);
        }
        let c = comp[i - 1] + h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
        if next.iter().any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::Integration { t: grid[i] });
        }
        states.extend_from_slice(&next);
        comp.push(c);
    }
    Ok((
        Trajectory {
            dim: n,
            times: grid,
            states,
        },
        comp,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsParams, StableFocus};

    struct Decay;
    impl VectorField for Decay {
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, x: &[f64], theta: &[f64], out: &mut [f64]) {
            out[0] = -theta[0] * x[0];
        }
        fn state_jacobian(&self, _t: f64, _x: &[f64], theta: &[f64], out: &mut [f64]) {
            out[0] = -theta[0];
        }
        fn param_jacobian(&self, _t: f64, x: &[f64], _theta: &[f64], out: &mut [f64]) {
            out[0] = -x[0];
        }
    }

    struct Zero;
    impl VectorField for Zero {
        fn state_dim(&self) -> usize {
            3
        }
        fn param_dim(&self) -> usize {
            0
        }
        fn eval(&self, _t: f64, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn state_jacobian(&self, _t: f64, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn param_jacobian(&self, _t: f64, _x: &[f64], _theta: &[f64], _out: &mut [f64]) {}
    }

    /// Time-dependent, nonlinear field for the adjoint check.
    struct Pendulum;
    impl VectorField for Pendulum {
        fn state_dim(&self) -> usize {
            2
        }
        fn param_dim(&self) -> usize {
            2
        }
        fn eval(&self, t: f64, x: &[f64], th: &[f64], out: &mut [f64]) {
            out[0] = x[1];
            out[1] = -th[0] * x[0].sin() - th[1] * x[1] + 0.3 * t.cos();
        }
        fn state_jacobian(&self, _t: f64, x: &[f64], th: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[0.0, 1.0, -th[0] * x[0].cos(), -th[1]]);
        }
        fn param_jacobian(&self, _t: f64, x: &[f64], _th: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[0.0, 0.0, -x[0].sin(), -x[1]]);
        }
    }

    #[test]
    fn zero_field_keeps_state() {
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let tr = integrate(&Zero, &[], &[1.0, -2.0, 3.5], 0.0, 2.0, &cfg, &[0.33]).unwrap();
        assert_eq!(tr.last(), &[1.0, -2.0, 3.5]);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let cfg = IntegratorConfig::new(1e-3).unwrap();
        let tr = integrate(&Decay, &[1.0], &[1.0], 0.0, 1.0, &cfg, &[]).unwrap();
        assert!((tr.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn stable_focus_radius_decays_exponentially() {
        let cfg = IntegratorConfig::new(1e-4).unwrap();
        let theta = DynamicsParams::new(0.265, 7.52).to_vec();
        let tr = integrate(&StableFocus, &theta, &[12.0, 0.0], 0.0, 3.0, &cfg, &[]).unwrap();
        for i in (0..tr.len()).step_by(997) {
            let z = tr.state(i);
            let r = z[0].hypot(z[1]);
            let expected = 12.0 * (-0.265 * tr.times[i]).exp();
            assert!((r - expected).abs() / expected < 1e-6);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let dts = [0.2, 0.1, 0.05, 0.025];
        let errs: Vec<f64> = dts
            .iter()
            .map(|&dt| {
                let cfg = IntegratorConfig::new(dt).unwrap();
                let tr = integrate(&Decay, &[1.0], &[1.0], 0.0, 2.0, &cfg, &[]).unwrap();
                (tr.last()[0] - (-2.0f64).exp()).abs()
            })
            .collect();
        let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = xs.iter().sum::<f64>() / 4.0;
        let my = ys.iter().sum::<f64>() / 4.0;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!(slope >= 3.7, "slope {slope}");
    }

    #[test]
    fn stops_are_exact_boundaries() {
        let cfg = IntegratorConfig::new(0.01).unwrap();
        let stops = [0.0123456789, 0.1, 0.1, 0.3333333333333333, 0.5];
        let tr = integrate(&Decay, &[0.7], &[1.0], 0.0, 0.5, &cfg, &stops).unwrap();
        for s in stops {
            assert!(tr.times.iter().any(|&t| t.to_bits() == s.to_bits()));
            assert!(tr.index_of(s).is_some());
        }
        assert!(tr
            .times
            .windows(2)
            .all(|w| w[1] > w[0] && w[1] - w[0] <= 0.01 + 1e-15));
    }

    #[test]
    fn rejects_bad_span_and_unsorted_stops() {
        let cfg = IntegratorConfig::new(0.01).unwrap();
        assert!(integrate(&Decay, &[1.0], &[1.0], 1.0, 0.0, &cfg, &[]).is_err());
        assert!(integrate(&Decay, &[1.0], &[1.0], 0.0, 1.0, &cfg, &[0.5, 0.2]).is_err());
        assert!(integrate(&Decay, &[1.0], &[1.0], 0.0, 1.0, &cfg, &[1.5]).is_err());
        assert!(IntegratorConfig::new(0.0).is_err());
    }

    #[test]
    fn blowup_reports_failing_time() {
        let cfg = IntegratorConfig::new(0.5).unwrap();
        let err = integrate(&Decay, &[-1e5], &[1.0], 0.0, 10.0, &cfg, &[]).unwrap_err();
        assert!(matches!(err, Error::Integration { t } if t > 0.0));
    }

    #[test]
    fn augmented_constant_rate() {
        let cfg = IntegratorConfig::new(0.01).unwrap();
        let (_, comp) = integrate_augmented(
            &Decay,
            &[1.0],
            &[1.0],
            0.5,
            1.75,
            &cfg,
            &[0.9],
            |_, _, _| 3.0,
        )
        .unwrap();
        assert!((comp.last().unwrap() - 3.0 * 1.25).abs() < 1e-12);
        assert!(comp.windows(2).all(|w| w[1] >= w[0]));
        let (_, comp) =
            integrate_augmented(&Decay, &[1.0], &[1.0], 0.5, 0.5, &cfg, &[], |_, _, _| 3.0)
                .unwrap();
        assert_eq!(*comp.last().unwrap(), 0.0);
    }

    #[test]
    fn step_vjp_matches_finite_differences() {
        // Loss = wᵀ x(t_b) through several steps of a nonlinear, time-varying field.
        let theta = [1.3, 0.2];
        let x0 = [0.8, -0.1];
        let cfg = IntegratorConfig::new(0.05).unwrap();
        let wv = [0.7, -1.1];
        let loss = |th: &[f64], x0: &[f64]| {
            let tr = integrate(&Pendulum, th, x0, 0.2, 1.0, &cfg, &[0.31]).unwrap();
            let z = tr.last();
            wv[0] * z[0] + wv[1] * z[1]
        };
        let tr = integrate(&Pendulum, &theta, &x0, 0.2, 1.0, &cfg, &[0.31]).unwrap();
        let mut adj = wv.to_vec();
        let mut gth = vec![0.0; 2];
        let mut work = Rk4Work::new(2, 2);
        for i in (1..tr.len()).rev() {
            let h = tr.times[i] - tr.times[i - 1];
            rk4_step_vjp(
                &Pendulum,
                &theta,
                tr.times[i - 1],
                tr.state(i - 1),
                h,
                &mut adj,
                &mut gth,
                &mut work,
            );
        }
        let h = 1e-6;
        for k in 0..2 {
            let mut tp = theta;
            let mut tm = theta;
            tp[k] += h;
            tm[k] -= h;
            let fd = (loss(&tp, &x0) - loss(&tm, &x0)) / (2.0 * h);
            assert!(
                (fd - gth[k]).abs() < 1e-7 * fd.abs().max(1.0),
                "θ{k}: {fd} vs {}",
                gth[k]
            );
            let mut xp = x0;
            let mut xm = x0;
            xp[k] += h;
            xm[k] -= h;
            let fd = (loss(&theta, &xp) - loss(&theta, &xm)) / (2.0 * h);
            assert!(
                (fd - adj[k]).abs() < 1e-7 * fd.abs().max(1.0),
                "x{k}: {fd} vs {}",
                adj[k]
            );
        }
    }
}
