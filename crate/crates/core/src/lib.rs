//! Event-camera simulation and receding-horizon maximum-likelihood estimation.
//!
//! The crate synthesizes event streams from a contrast-threshold sensor model
//! observing a moving Gaussian blob, and estimates the blob's latent dynamics
//! together with a pixel-dependent contrast threshold by minimizing a windowed
//! marked point-process negative log-likelihood. Gradients are computed with a
//! discrete adjoint pass over the forward trajectory.
//!
//! Layout:
//! - [`scene`] and [`dynamics`]: sensor geometry, known drift, the latent vector
//!   field and the differentiable renderer.
//! - [`synth`] and [`io`]: event generation and file formats.
//! - [`ode`]: fixed-step RK4 with exact stop times and its discrete adjoint.
//! - [`point_process`]: thresholds, surrogate intensity, per-pixel memory, the
//!   Monte Carlo compensator and the windowed objective.
//! - [`gradient`]: adjoint and finite-difference gradients.
//! - [`optim`] and [`estimator`]: Adam and the receding-horizon loop.
//! - [`config`] and [`experiment`]: the experiment document and CLI commands.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod gradient;
pub mod io;
pub mod ode;
pub mod optim;
pub mod point_process;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
