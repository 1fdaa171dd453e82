//! Low-dimensional threshold parameterization: a global offset plus a coarse
//! grid bilinearly interpolated to the pixel grid.
//!
//! Coarse node `(i, j)` sits at pixel position
//! `(j (W−1)/(W_c−1), i (H−1)/(H_c−1))`. Each pixel's residual is a convex
//! combination of its four surrounding nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{PixelCoord, SensorGeometry};
use crate::synth::ThresholdField;

/// Lower bound enforced on every interpolated threshold after a step.
pub const MIN_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub c_base: f64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols` coarse residual field.
    pub grid: Vec<f64>,
}

impl ThresholdParams {
    pub fn uniform(c_base: f64, rows: usize, cols: usize) -> Self {
        Self {
            c_base,
            rows,
            cols,
            grid: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        1 + self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-pixel interpolation weights for one geometry and coarse-grid shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    pub geometry: SensorGeometry,
    pub rows: usize,
    pub cols: usize,
    /// For each pixel: four (node index, weight) pairs.
    stencil: Vec<[(u32, f64); 4]>,
}

fn axis(pos: usize, pixels: usize, nodes: usize) -> (usize, usize, f64) {
    if nodes == 1 || pixels == 1 {
        return (0, 0, 0.0);
    }
    let g = pos as f64 * (nodes - 1) as f64 / (pixels - 1) as f64;
    let lo = (g.floor() as usize).min(nodes - 2);
    (lo, lo + 1, g - lo as f64)
}

impl CoarseGrid {
    pub fn new(geometry: SensorGeometry, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(
                "coarse grid must be at least 1x1".to_string(),
            ));
        }
        let stencil = geometry
            .pixels()
            .map(|u| {
                let (j0, j1, fx) = axis(u.x as usize, geometry.width, cols);
                let (i0, i1, fy) = axis(u.y as usize, geometry.height, rows);
                let n = |i: usize, j: usize| (i * cols + j) as u32;
                [
                    (n(i0, j0), (1.0 - fy) * (1.0 - fx)),
                    (n(i0, j1), (1.0 - fy) * fx),
                    (n(i1, j0), fy * (1.0 - fx)),
                    (n(i1, j1), fy * fx),
                ]
            })
            .collect();
        Ok(Self {
            geometry,
            rows,
            cols,
            stencil,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.rows * self.cols
    }

    pub fn stencil(&self, pixel: usize) -> &[(u32, f64); 4] {
        &self.stencil[pixel]
    }

    fn check(&self, psi: &ThresholdParams) {
        assert_eq!(
            (psi.rows, psi.cols),
            (self.rows, self.cols),
            "coarse grid shape mismatch"
        );
    }

    /// `C_ψ(u) = C_base + δ_η(u)`.
    pub fn threshold_at(&self, psi: &ThresholdParams, u: PixelCoord) -> f64 {
        self.check(psi);
        self.threshold_at_index(psi, self.geometry.index(u))
    }

    #[inline]
    pub fn threshold_at_index(&self, psi: &ThresholdParams, pixel: usize) -> f64 {
        psi.c_base
            + self.stencil[pixel]
                .iter()
                .map(|&(n, w)| w * psi.grid[n as usize])
                .sum::<f64>()
    }

    /// Interpolated thresholds for every pixel, row-major.
    pub fn dense(&self, psi: &ThresholdParams) -> Vec<f64> {
        self.check(psi);
        (0..self.geometry.num_pixels())
            .map(|i| self.threshold_at_index(psi, i))
            .collect()
    }

    pub fn field(&self, psi: &ThresholdParams) -> Result<ThresholdField> {
        ThresholdField::new(self.geometry, self.dense(psi))
    }

    /// Scatter per-pixel sensitivities `∂ℓ/∂C(u)` onto `[C_base, η...]`.
    pub fn pullback(&self, dl_dc: &[f64], out: &mut [f64]) {
        for (pixel, &g) in dl_dc.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            out[0] += g;
            for &(n, w) in &self.stencil[pixel] {
                out[1 + n as usize] += w * g;
            }
        }
    }

    /// Raise `C_base` so that every interpolated threshold is at least `floor`.
    /// Returns whether the parameters changed.
    pub fn project_positive(&self, psi: &mut ThresholdParams, floor: f64) -> bool {
        let min = self.dense(psi).into_iter().fold(f64::INFINITY, f64::min);
        if min < floor {
            psi.c_base += floor - min;
            true
        } else {
            false
        }
    }
}
