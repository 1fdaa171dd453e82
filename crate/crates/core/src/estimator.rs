//! Receding-horizon estimation loop.
//!
//! Update `m` optimizes the window `(τ_{m−H}, τ_m]` (clipped at `τ0`) for a
//! fixed number of replayed steps, then moves the boundary memory and the
//! latent checkpoint forward to the next window start using the post-update
//! parameters. Update times are indexed by integers so window boundaries are
//! reproducible bit for bit.

use std::time::Instant;

use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::gradient::adjoint_gradient;
use crate::optim::{AdamConfig, Optimizer, OptimizerKind};
use crate::point_process::threshold::MIN_THRESHOLD;
use crate::point_process::{
    advance_memory, window_nll, Checkpoint, McConfig, Model, Params, PerPixelMemory,
    ThresholdParams, Window,
};
use crate::synth::EventStream;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub dt_upd: f64,
    pub horizon: usize,
    pub n_step: usize,
    /// Step size for the dynamics parameters.
    pub lr: f64,
    /// Step size for the threshold parameters.
    pub lr_threshold: f64,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    pub mc: McConfig,
    pub init_theta: DynamicsParams,
    pub init_psi: ThresholdParams,
    pub z0: Vec<f64>,
    pub tau0: f64,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_upd > 0.0 && self.dt_upd.is_finite()) {
            return Err(Error::InvalidConfig("dt_upd must be positive".to_string()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig(
                "horizon must be at least 1".to_string(),
            ));
        }
        if !(self.lr > 0.0 && self.lr_threshold > 0.0) {
            return Err(Error::InvalidConfig(
                "step sizes must be positive".to_string(),
            ));
        }
        Ok(())
    }

    pub fn tau(&self, m: usize) -> f64 {
        self.tau0 + m as f64 * self.dt_upd
    }

    /// Index of the first update time inside window `m`.
    pub fn window_start(&self, m: usize) -> usize {
        m.saturating_sub(self.horizon)
    }

    /// Number of updates that fit in `[τ0, t_end]`.
    pub fn num_updates(&self, t_end: f64) -> usize {
        ((t_end - self.tau0) / self.dt_upd + 1e-9).floor().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub m: usize,
    pub tau: f64,
    pub theta: Vec<f64>,
    pub psi: ThresholdParams,
    /// Objective after the update, on the window's own pixel sample.
    pub nll: f64,
    pub events: usize,
    pub update_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTrace {
    pub records: Vec<UpdateRecord>,
    pub final_params: Params,
}

pub fn run_receding_horizon(
    stream: &EventStream,
    model: &Model,
    cfg: &EstimatorConfig,
) -> Result<EstimateTrace> {
    cfg.validate()?;
    cfg.mc.validate(model.scene.geometry)?;
    let mut params = Params {
        theta: cfg.init_theta.to_vec(),
        psi: cfg.init_psi.clone(),
    };
    model
        .coarse
        .project_positive(&mut params.psi, MIN_THRESHOLD);
    let mut memory = PerPixelMemory::initial(&model.scene, cfg.tau0, &cfg.z0);
    let mut checkpoint = Checkpoint {
        t: cfg.tau0,
        z: cfg.z0.clone(),
    };
    let mut opt = Optimizer::new(cfg.optimizer, params.len(), cfg.adam);
    let k = params.theta.len();
    let rates: Vec<f64> = (0..params.len())
        .map(|i| if i < k { cfg.lr } else { cfg.lr_threshold })
        .collect();
    let updates = cfg.num_updates(stream.t_end);
    let mut records = Vec::with_capacity(updates);

    for m in 1..=updates {
        let wrap = |e: Error| Error::Update {
            update: m,
            source: Box::new(e),
        };
        let t_a = cfg.tau(cfg.window_start(m));
        let t_b = cfg.tau(m);
        debug_assert_eq!(checkpoint.t, t_a);
        let events = stream.window(t_a, t_b);
        let window = Window {
            t_a,
            t_b,
            events,
            memory: &memory,
            z_a: &checkpoint.z,
        };

        let start = Instant::now();
        for step in 0..cfg.n_step {
            let sample = cfg
                .mc
                .sample_for(model.scene.geometry, m as u64, step as u64);
            let report = adjoint_gradient(model, &window, &params, &sample).map_err(wrap)?;
            let mut x = params.to_vec();
            opt.step(&mut x, &report.to_vec(), &rates);
            params.set_from_slice(&x);
            model
                .coarse
                .project_positive(&mut params.psi, MIN_THRESHOLD);
        }
        let update_ms = start.elapsed().as_secs_f64() * 1e3;

        let sample = cfg
            .mc
            .sample_for(model.scene.geometry, m as u64, cfg.n_step as u64);
        let nll = window_nll(model, &window, &params, &sample)
            .map_err(wrap)?
            .nll;
        records.push(UpdateRecord {
            m,
            tau: t_b,
            theta: params.theta.clone(),
            psi: params.psi.clone(),
            nll,
            events: events.len(),
            update_ms,
        });

        let next = cfg.window_start(m + 1);
        if next > cfg.window_start(m) {
            let t_next = cfg.tau(next);
            checkpoint = advance_memory(
                &model.scene,
                model.field.as_ref(),
                &model.integrator,
                &params.theta,
                &mut memory,
                &checkpoint,
                stream.window(t_a, t_next),
                t_next,
            )
            .map_err(wrap)?;
        }
    }
    Ok(EstimateTrace {
        records,
        final_params: params,
    })
}
