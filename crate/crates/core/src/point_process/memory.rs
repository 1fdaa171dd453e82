//! Per-pixel streaming memory and the latent-state checkpoint carried between
//! windows.

use crate::dynamics::VectorField;
use crate::error::Result;
use crate::ode::{integrate, IntegratorConfig};
use crate::scene::{Scene, SensorGeometry};
use crate::synth::Event;

/// Two scalars per pixel: the time of its last event and the predicted
/// log-intensity at that time.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPixelMemory {
    pub geometry: SensorGeometry,
    pub t_last: Vec<f64>,
    pub l_last: Vec<f64>,
}

impl PerPixelMemory {
    /// Every pixel starts at `t0` with the log-intensity predicted from `z0`.
    pub fn initial(scene: &Scene, t0: f64, z0: &[f64]) -> Self {
        Self {
            geometry: scene.geometry,
            t_last: vec![t0; scene.geometry.num_pixels()],
            l_last: scene.render_frame(t0, z0),
        }
    }

    pub fn latest(&self) -> f64 {
        self.t_last
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Detached latent state at a window start.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub z: Vec<f64>,
}

/// Move the memory and checkpoint forward to `t_new`, overwriting each pixel
/// touched by an event in `(checkpoint.t, t_new]` with the prediction under
/// `theta`. Events outside that span are ignored.
pub fn advance_memory(
    scene: &Scene,
    field: &dyn VectorField,
    integrator: &IntegratorConfig,
    theta: &[f64],
    memory: &mut PerPixelMemory,
    checkpoint: &Checkpoint,
    events: &[Event],
    t_new: f64,
) -> Result<Checkpoint> {
    let t0 = checkpoint.t;
    let span: Vec<&Event> = events.iter().filter(|e| e.t > t0 && e.t <= t_new).collect();
    let stops: Vec<f64> = span.iter().map(|e| e.t).collect();
    let traj = integrate(field, theta, &checkpoint.z, t0, t_new, integrator, &stops)?;
    for e in span {
        let i = traj.index_of(e.t).expect("event time is a stop");
        let idx = memory.geometry.index(e.u);
        memory.t_last[idx] = e.t;
        memory.l_last[idx] = scene.log_intensity(e.u, e.t, traj.state(i));
    }
    Ok(Checkpoint {
        t: t_new,
        z: traj.last().to_vec(),
    })
}
