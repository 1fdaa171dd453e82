//! Windowed negative log-likelihood.
//!
//! A window `(t_a, t_b]` is evaluated from a detached latent checkpoint `z_a`
//! and a detached per-pixel memory. The latent trajectory is integrated with
//! RK4 on a grid that contains every event time and every compensator
//! quadrature node. Inside the window the memory of a pixel is overwritten
//! with the current prediction each time that pixel fires.
//!
//! The compensator of each sampled pixel is integrated with composite Simpson
//! panels over a uniform base grid. A panel that contains events of that pixel
//! is split at those events, so the integrand is smooth on every sub-panel.
//!
//! When asked, the forward pass also records the local sensitivities of the
//! objective with respect to the state at each trajectory sample and with
//! respect to each pixel's threshold. The adjoint pass in
//! [`crate::gradient`] turns these into parameter gradients.

use std::sync::Arc;

use super::intensity::{intensity_with_dphi, IntensityHyper};
use super::mc::PixelSample;
use super::memory::PerPixelMemory;
use super::threshold::{CoarseGrid, ThresholdParams};
use crate::dynamics::VectorField;
use crate::error::{Error, Result};
use crate::ode::{integrate_on_grid, IntegratorConfig, Trajectory};
use crate::scene::{render_with_grad, Scene};
use crate::synth::Event;

const NONE: usize = usize::MAX;

/// Everything the objective needs that is not estimated.
#[derive(Clone)]
pub struct Model {
    pub scene: Scene,
    pub field: Arc<dyn VectorField>,
    pub hyper: IntensityHyper,
    pub integrator: IntegratorConfig,
    pub coarse: CoarseGrid,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("scene", &self.scene)
            .field("hyper", &self.hyper)
            .field("integrator", &self.integrator)
            .finish_non_exhaustive()
    }
}

/// Estimated quantities: dynamics parameters and threshold parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub theta: Vec<f64>,
    pub psi: ThresholdParams,
}

impl Params {
    pub fn len(&self) -> usize {
        self.theta.len() + self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat layout `[θ..., C_base, η...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.push(self.psi.c_base);
        v.extend_from_slice(&self.psi.grid);
        v
    }

    pub fn set_from_slice(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.len(), "parameter vector length");
        let k = self.theta.len();
        self.theta.copy_from_slice(&v[..k]);
        self.psi.c_base = v[k];
        self.psi.grid.copy_from_slice(&v[k + 1..]);
    }

    pub fn with_vec(&self, v: &[f64]) -> Self {
        let mut p = self.clone();
        p.set_from_slice(v);
        p
    }
}

/// One receding-horizon window. Memory and checkpoint are constants.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub t_a: f64,
    pub t_b: f64,
    pub events: &'a [Event],
    pub memory: &'a PerPixelMemory,
    pub z_a: &'a [f64],
}

impl Window<'_> {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_a < self.t_b) {
            return Err(Error::InvalidConfig(format!(
                "window ({}, {}] is empty",
                self.t_a, self.t_b
            )));
        }
        for (k, e) in self.events.iter().enumerate() {
            if !(e.t > self.t_a && e.t <= self.t_b) {
                return Err(Error::EventOutsideWindow {
                    t: e.t,
                    t_a: self.t_a,
                    t_b: self.t_b,
                });
            }
            if k > 0 && self.events[k - 1].t > e.t {
                return Err(Error::InvalidConfig(
                    "window events are not sorted".to_string(),
                ));
            }
        }
        if self.memory.latest() > self.t_a {
            return Err(Error::InvalidConfig(
                "boundary memory is newer than the window start".to_string(),
            ));
        }
        Ok(())
    }
}

/// Objective value and its breakdown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowEval {
    pub nll: f64,
    pub event_term: f64,
    pub compensator_term: f64,
    /// Residual of every in-window event, in stream order.
    pub residuals: Vec<f64>,
    pub steps: usize,
}

/// Local partial derivatives collected during the forward pass.
pub(crate) struct Local {
    /// `∂ℓ/∂z_i` at every trajectory sample, flattened like the states.
    pub dz: Vec<f64>,
    /// `∂ℓ/∂C(u)` per pixel.
    pub dc: Vec<f64>,
}

pub(crate) struct Forward {
    pub eval: WindowEval,
    pub traj: Trajectory,
    pub local: Option<Local>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ForwardOptions {
    pub local: bool,
    /// Multiplies the event-term state sensitivity. Only a negative control
    /// for gradient checking sets this to anything but 1.
    pub event_jump_sign: f64,
}

/// Uniform Simpson base grid on `[t_a, t_b]` with the end point kept exact.
struct BaseGrid {
    nodes: Vec<f64>,
    mids: Vec<f64>,
}

impl BaseGrid {
    fn new(t_a: f64, t_b: f64, dt_max: f64) -> Self {
        let n = ((t_b - t_a) / dt_max).ceil().max(1.0) as usize;
        let mut nodes: Vec<f64> = (0..n)
            .map(|i| t_a + (t_b - t_a) * i as f64 / n as f64)
            .collect();
        nodes.push(t_b);
        let mids = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self { nodes, mids }
    }

    fn panels(&self) -> usize {
        self.mids.len()
    }

    /// Panel `i` with `nodes[i] <= t < nodes[i + 1]`; `None` past the end.
    fn panel_of(&self, t: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|&g| g <= t);
        (i >= 1 && i < self.nodes.len()).then(|| i - 1)
    }
}

/// Break points of a base panel split by events strictly inside it.
struct SplitPanel {
    panel: usize,
    /// `[a, e_1, ..., e_k, b]`.
    breaks: Vec<f64>,
}

fn split_panels(grid: &BaseGrid, times: &[f64]) -> Vec<SplitPanel> {
    let mut out: Vec<SplitPanel> = Vec::new();
    for &t in times {
        let Some(i) = grid.panel_of(t) else { continue };
        if t == grid.nodes[i] {
            continue;
        }
        match out.last_mut() {
            Some(sp) if sp.panel == i => {
                if *sp.breaks.last().unwrap() != t {
                    sp.breaks.push(t);
                }
            }
            _ => out.push(SplitPanel {
                panel: i,
                breaks: vec![grid.nodes[i], t],
            }),
        }
    }
    for sp in &mut out {
        sp.breaks.push(grid.nodes[sp.panel + 1]);
    }
    out
}

/// Rendered prediction and its state gradient at one pixel and time.
#[derive(Clone, Copy)]
struct Pred {
    l: f64,
    g: [f64; 2],
    idx: usize,
}

pub(crate) fn forward(
    model: &Model,
    w: &Window<'_>,
    params: &Params,
    sample: &PixelSample,
    opts: ForwardOptions,
) -> Result<Forward> {
    w.validate()?;
    let dim = model.field.state_dim();
    if w.z_a.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: w.z_a.len(),
        });
    }
    if params.theta.len() != model.field.param_dim() {
        return Err(Error::Dimension {
            expected: model.field.param_dim(),
            got: params.theta.len(),
        });
    }
    let geometry = model.scene.geometry;
    let npix = geometry.num_pixels();
    let thr = model.coarse.dense(&params.psi);
    let h = &model.hyper;
    let scene = &model.scene;

    // In-window events per sampled pixel.
    let mut slot = vec![NONE; npix];
    for (s, &(pix, _)) in sample.entries.iter().enumerate() {
        slot[pix as usize] = s;
    }
    let mut pix_events: Vec<Vec<usize>> = vec![Vec::new(); sample.entries.len()];
    for (k, e) in w.events.iter().enumerate() {
        let s = slot[geometry.index(e.u)];
        if s != NONE {
            pix_events[s].push(k);
        }
    }

    let grid = BaseGrid::new(w.t_a, w.t_b, model.integrator.dt_max);
    let splits: Vec<Vec<SplitPanel>> = pix_events
        .iter()
        .map(|evs| {
            let times: Vec<f64> = evs.iter().map(|&k| w.events[k].t).collect();
            split_panels(&grid, &times)
        })
        .collect();

    let mut stops: Vec<f64> = Vec::with_capacity(2 * grid.panels() + 2 * w.events.len() + 1);
    stops.extend_from_slice(&grid.nodes);
    stops.extend_from_slice(&grid.mids);
    stops.extend(w.events.iter().map(|e| e.t));
    for sp in splits.iter().flatten() {
        stops.extend(sp.breaks.windows(2).map(|b| 0.5 * (b[0] + b[1])));
    }
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    let traj = integrate_on_grid(model.field.as_ref(), &params.theta, w.z_a, stops)?;
    let index = |t: f64| {
        traj.index_of(t)
            .expect("quadrature node is a trajectory sample")
    };

    // Blob centers at every sample, shared by all pixels.
    let centers: Vec<[f64; 2]> = (0..traj.len())
        .map(|i| scene.center(traj.times[i], traj.state(i)))
        .collect();
    let predict = |pix: usize, _t: f64, idx: usize| -> Pred {
        let (l, g) = render_with_grad(geometry.coord(pix), centers[idx], &scene.renderer);
        Pred { l, g, idx }
    };

    let mut local = opts.local.then(|| Local {
        dz: vec![0.0; traj.states.len()],
        dc: vec![0.0; npix],
    });
    let mut mu = vec![0.0; if opts.local { w.events.len() } else { 0 }];

    // Event term, replaying the in-window memory.
    let mut l_cur = w.memory.l_last.clone();
    let mut src = vec![NONE; npix];
    let mut ev_pred: Vec<Pred> = Vec::with_capacity(w.events.len());
    let mut residuals = Vec::with_capacity(w.events.len());
    let mut event_term = 0.0;
    for (k, e) in w.events.iter().enumerate() {
        let pix = geometry.index(e.u);
        let pred = predict(pix, e.t, index(e.t));
        let p = e.p.sign();
        let phi = pred.l - l_cur[pix] - p * thr[pix];
        let (lambda, dlam) = intensity_with_dphi(phi, h);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::NonFinite {
                what: "event log-intensity",
                t: e.t,
            });
        }
        event_term -= lambda.ln();
        residuals.push(phi);
        if let Some(loc) = local.as_mut() {
            let g = -dlam / lambda;
            let jump = opts.event_jump_sign * g;
            loc.dz[pred.idx * dim] += jump * pred.g[0];
            loc.dz[pred.idx * dim + 1] += jump * pred.g[1];
            loc.dc[pix] -= g * p;
            if src[pix] != NONE {
                mu[src[pix]] -= g;
            }
        }
        l_cur[pix] = pred.l;
        src[pix] = k;
        ev_pred.push(pred);
    }

    // Compensator term.
    let node_idx: Vec<usize> = grid.nodes.iter().map(|&t| index(t)).collect();
    let mid_idx: Vec<usize> = grid.mids.iter().map(|&t| index(t)).collect();
    let mut compensator_term = 0.0;
    for (s, &(pix32, mult)) in sample.entries.iter().enumerate() {
        let pix = pix32 as usize;
        let c = thr[pix];
        let scale = sample.weight * mult as f64;
        let evs = &pix_events[s];
        let mut ptr = 0;
        let mut mem_l = w.memory.l_last[pix];
        let mut mem_src = NONE;
        let mut integral = 0.0;
        let mut split_iter = splits[s].iter().peekable();

        // Adds `weight * Σ_p λ` at one quadrature point and its sensitivities.
        // Far from the blob the prediction is constant to the last bit, so the
        // intensity pair is memoized on its exact input.
        let mut memo = [f64::NAN; 5];
        let mut point =
            |pred: &Pred, mem_l: f64, mem_src: usize, weight: f64, integral: &mut f64| {
                let d = pred.l - mem_l;
                if d != memo[0] {
                    let (lp, dp) = intensity_with_dphi(d - c, h);
                    let (lm, dm) = intensity_with_dphi(d + c, h);
                    memo = [d, lp, dp, lm, dm];
                }
                let [_, lp, dp, lm, dm] = memo;
                *integral += weight * (lp + lm);
                if let Some(loc) = local.as_mut() {
                    let wt = weight * scale;
                    let gsum = wt * (dp + dm);
                    loc.dz[pred.idx * dim] += gsum * pred.g[0];
                    loc.dz[pred.idx * dim + 1] += gsum * pred.g[1];
                    loc.dc[pix] += wt * (dm - dp);
                    if mem_src != NONE {
                        mu[mem_src] -= gsum;
                    }
                }
            };

        // Simpson weight of `left` not yet applied; adjacent panels sharing a
        // node and a memory state are merged into one evaluation.
        let mut pending = 0.0;
        let mut left = predict(pix, grid.nodes[0], node_idx[0]);
        for i in 0..grid.panels() {
            let (a, b) = (grid.nodes[i], grid.nodes[i + 1]);
            if ptr < evs.len() && w.events[evs[ptr]].t <= a {
                if pending != 0.0 {
                    point(&left, mem_l, mem_src, pending, &mut integral);
                    pending = 0.0;
                }
                while ptr < evs.len() && w.events[evs[ptr]].t <= a {
                    mem_l = ev_pred[evs[ptr]].l;
                    mem_src = evs[ptr];
                    ptr += 1;
                }
            }
            let right = predict(pix, b, node_idx[i + 1]);
            if split_iter.peek().is_some_and(|sp| sp.panel == i) {
                let sp = split_iter.next().unwrap();
                let mut lo = left;
                for (j, seg) in sp.breaks.windows(2).enumerate() {
                    let (p, q) = (seg[0], seg[1]);
                    if j > 0 {
                        while ptr < evs.len() && w.events[evs[ptr]].t <= p {
                            mem_l = ev_pred[evs[ptr]].l;
                            mem_src = evs[ptr];
                            ptr += 1;
                        }
                    }
                    let m = 0.5 * (p + q);
                    let mid = predict(pix, m, index(m));
                    let wgt = (q - p) / 6.0;
                    point(&lo, mem_l, mem_src, wgt + pending, &mut integral);
                    pending = 0.0;
                    point(&mid, mem_l, mem_src, 4.0 * wgt, &mut integral);
                    if q == b {
                        pending = wgt;
                        lo = right;
                    } else {
                        let hi = predict(pix, q, index(q));
                        point(&hi, mem_l, mem_src, wgt, &mut integral);
                        lo = hi;
                    }
                }
            } else {
                let mid = predict(pix, grid.mids[i], mid_idx[i]);
                let wgt = (b - a) / 6.0;
                point(&left, mem_l, mem_src, wgt + pending, &mut integral);
                point(&mid, mem_l, mem_src, 4.0 * wgt, &mut integral);
                pending = wgt;
            }
            left = right;
        }
        if pending != 0.0 {
            point(&left, mem_l, mem_src, pending, &mut integral);
        }
        compensator_term += scale * integral;
    }

    if let Some(loc) = local.as_mut() {
        for (k, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                let pred = &ev_pred[k];
                loc.dz[pred.idx * dim] += m * pred.g[0];
                loc.dz[pred.idx * dim + 1] += m * pred.g[1];
            }
        }
    }

    let nll = event_term + compensator_term;
    if !nll.is_finite() {
        return Err(Error::NonFinite {
            what: "window objective",
            t: w.t_b,
        });
    }
    Ok(Forward {
        eval: WindowEval {
            nll,
            event_term,
            compensator_term,
            residuals,
            steps: traj.len() - 1,
        },
        traj,
        local,
    })
}

/// `ℓ^win`: event term plus Monte Carlo compensator over the window.
pub fn window_nll(
    model: &Model,
    window: &Window<'_>,
    params: &Params,
    sample: &PixelSample,
) -> Result<WindowEval> {
    let opts = ForwardOptions {
        local: false,
        event_jump_sign: 1.0,
    };
    Ok(forward(model, window, params, sample, opts)?.eval)
}
