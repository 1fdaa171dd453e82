//! Marked point-process observation model.
//!
//! Marks are (pixel, polarity) pairs. The conditional intensity of a mark is a
//! softplus of the distance between the predicted log-intensity increment
//! since the pixel's last event and the signed contrast threshold.

pub mod intensity;
pub mod mc;
pub mod memory;
pub mod threshold;
pub mod window;

pub use intensity::{intensity, intensity_dphi, residual, IntensityHyper};
pub use mc::{total_intensity_mc, McConfig, PixelSample, ResamplePolicy};
pub use memory::{advance_memory, Checkpoint, PerPixelMemory};
pub use threshold::{CoarseGrid, ThresholdParams};
pub use window::{window_nll, Model, Params, Window, WindowEval};
