//! Sensor geometry, the known base-center drift and the Gaussian-blob renderer.
//!
//! Pixel `(x, y)` is the continuous point `(x, y)`; there is no half-pixel
//! offset. The blob center is `c(t) = c0(t) + z(t)` where `c0` is the known
//! drift and `z` the first two components of the latent state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: usize,
    pub height: usize,
}

impl SensorGeometry {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "sensor geometry must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    /// `|Ω|`, the number of pixels.
    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Size of the mark space (pixel, polarity).
    pub fn num_marks(&self) -> usize {
        2 * self.num_pixels()
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Row-major pixel index (`row = y`).
    #[inline]
    pub fn index(&self, u: PixelCoord) -> usize {
        u.y as usize * self.width + u.x as usize
    }

    #[inline]
    pub fn coord(&self, index: usize) -> PixelCoord {
        PixelCoord {
            x: (index % self.width) as u32,
            y: (index / self.width) as u32,
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = PixelCoord> + '_ {
        (0..self.num_pixels()).map(move |i| self.coord(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelCoord {
    pub x: u32,
    pub y: u32,
}

impl PixelCoord {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn position(&self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

/// Known sinusoidal drift of the blob's base center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub c_base: [f64; 2],
    pub amp_x: f64,
    pub amp_y: f64,
    pub period_x: f64,
    pub period_y: f64,
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.period_x > 0.0 && self.period_y > 0.0) {
            return Err(Error::InvalidConfig(
                "drift periods must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            c_base: [32.0, 32.0],
            amp_x: 22.0,
            amp_y: 22.0,
            period_x: 1.0,
            period_y: 1.3,
        }
    }
}

/// `c0(t) = c_base + [A sin(2πt/T1), B sin(2πt/T2)]`.
pub fn base_center(t: f64, cfg: &DriftConfig) -> [f64; 2] {
    [
        cfg.c_base[0] + cfg.amp_x * (2.0 * PI * t / cfg.period_x).sin(),
        cfg.c_base[1] + cfg.amp_y * (2.0 * PI * t / cfg.period_y).sin(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RendererConfig {
    pub background: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub eps: f64,
}

impl RendererConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.background >= 0.0 && self.amplitude >= 0.0 && self.sigma > 0.0 && self.eps > 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "renderer requires background >= 0, amplitude >= 0, sigma > 0, eps > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            background: 0.15,
            amplitude: 0.75,
            sigma: 2.0,
            eps: 1e-3,
        }
    }
}

/// Predicted log-intensity `log(I_bg + I_amp exp(-|u-c|^2 / 2σ^2) + ε)`.
#[inline]
pub fn render_log_intensity(u: PixelCoord, c: [f64; 2], cfg: &RendererConfig) -> f64 {
    let dx = u.x as f64 - c[0];
    let dy = u.y as f64 - c[1];
    let blob = cfg.amplitude * (-(dx * dx + dy * dy) / (2.0 * cfg.sigma * cfg.sigma)).exp();
    (cfg.background + blob + cfg.eps).ln()
}

/// Gradient of [`render_log_intensity`] with respect to the center `c`.
///
/// Since `c = c0(t) + z`, this is also the gradient with respect to `z`.
#[inline]
pub fn render_log_intensity_grad(u: PixelCoord, c: [f64; 2], cfg: &RendererConfig) -> [f64; 2] {
    render_with_grad(u, c, cfg).1
}

/// Log-intensity and its center gradient sharing one exponential.
#[inline]
pub fn render_with_grad(u: PixelCoord, c: [f64; 2], cfg: &RendererConfig) -> (f64, [f64; 2]) {
    let inv_var = 1.0 / (cfg.sigma * cfg.sigma);
    let dx = u.x as f64 - c[0];
    let dy = u.y as f64 - c[1];
    let blob = cfg.amplitude * (-0.5 * (dx * dx + dy * dy) * inv_var).exp();
    let intensity = cfg.background + blob + cfg.eps;
    let s = blob / intensity * inv_var;
    (intensity.ln(), [s * dx, s * dy])
}

/// Static scene description shared by synthesis and estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub geometry: SensorGeometry,
    pub drift: DriftConfig,
    pub renderer: RendererConfig,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        SensorGeometry::new(self.geometry.width, self.geometry.height)?;
        self.drift.validate()?;
        self.renderer.validate()
    }

    /// Blob center for latent offset `z` at time `t`.
    #[inline]
    pub fn center(&self, t: f64, z: &[f64]) -> [f64; 2] {
        let c0 = base_center(t, &self.drift);
        [c0[0] + z[0], c0[1] + z[1]]
    }

    pub fn log_intensity(&self, u: PixelCoord, t: f64, z: &[f64]) -> f64 {
        render_log_intensity(u, self.center(t, z), &self.renderer)
    }

    /// Full log-intensity frame, row-major.
    pub fn render_frame(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let c = self.center(t, z);
        self.geometry
            .pixels()
            .map(|u| render_log_intensity(u, c, &self.renderer))
            .collect()
    }
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            geometry: SensorGeometry {
                width: 64,
                height: 64,
            },
            drift: DriftConfig::default(),
            renderer: RendererConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn base_center_at_origin_and_half_period() {
        let cfg = DriftConfig::default();
        assert_eq!(base_center(0.0, &cfg), [32.0, 32.0]);
        let c = base_center(0.5, &cfg);
        assert!((c[0] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn base_center_quarter_period() {
        let cfg = DriftConfig::default();
        let c = base_center(0.25, &cfg);
        assert!((c[0] - 54.0).abs() < 1e-12);
        let expected_y = 32.0 + 22.0 * (std::f64::consts::PI * 0.5 / 1.3).sin();
        assert!((c[1] - expected_y).abs() < 1e-12);
        assert!((c[1] - 52.570_357_339_079_12).abs() < 1e-12);
    }

    #[test]
    fn geometry_rejects_empty() {
        assert!(SensorGeometry::new(0, 3).is_err());
        let g = SensorGeometry::new(5, 3).unwrap();
        assert_eq!(g.num_pixels(), 15);
        assert_eq!(g.num_marks(), 30);
        let u = PixelCoord::new(4, 2);
        assert_eq!(g.coord(g.index(u)), u);
    }

    #[test]
    fn render_peak_and_tail() {
        let cfg = RendererConfig::default();
        let u = PixelCoord::new(10, 12);
        let at = render_log_intensity(u, [10.0, 12.0], &cfg);
        assert!((at - 0.901f64.ln()).abs() < 1e-14);
        let far = render_log_intensity(u, [1e4, 1e4], &cfg);
        assert!((far - (0.15f64 + 1e-3).ln()).abs() < 1e-14);
        assert_eq!(render_log_intensity_grad(u, [10.0, 12.0], &cfg), [0.0, 0.0]);
    }

    #[test]
    fn render_is_radially_symmetric_and_monotone() {
        let cfg = RendererConfig::default();
        let c = [20.0, 20.0];
        let base = render_log_intensity(PixelCoord::new(23, 24), c, &cfg);
        for (x, y) in [
            (17, 24),
            (23, 16),
            (17, 16),
            (24, 23),
            (16, 23),
            (24, 17),
            (16, 17),
        ] {
            let v = render_log_intensity(PixelCoord::new(x, y), c, &cfg);
            assert!((v - base).abs() < 1e-15, "({x},{y})");
        }
        let mut prev = f64::INFINITY;
        for d in 0..30 {
            let v = render_log_intensity(PixelCoord::new(20 + d, 20), c, &cfg);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn render_gradient_matches_central_differences() {
        let cfg = RendererConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..100 {
            let u = PixelCoord::new(rng.gen_range(0..64), rng.gen_range(0..64));
            let c = [
                u.x as f64 + rng.gen_range(-6.0..6.0),
                u.y as f64 + rng.gen_range(-6.0..6.0),
            ];
            let g = render_log_intensity_grad(u, c, &cfg);
            for k in 0..2 {
                let mut cp = c;
                let mut cm = c;
                cp[k] += h;
                cm[k] -= h;
                let fd = (render_log_intensity(u, cp, &cfg) - render_log_intensity(u, cm, &cfg))
                    / (2.0 * h);
                let scale = g[k].abs().max(fd.abs()).max(1e-6);
                assert!((g[k] - fd).abs() / scale < 1e-6, "k={k} g={} fd={fd}", g[k]);
            }
        }
    }

    #[test]
    fn render_gradient_points_from_center_toward_pixel() {
        // Moving the blob toward the pixel brightens it, so the gradient with
        // respect to the center has a positive inner product with u - c.
        let cfg = RendererConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let u = PixelCoord::new(rng.gen_range(0..64), rng.gen_range(0..64));
            let c = [rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)];
            let g = render_log_intensity_grad(u, c, &cfg);
            let d = [u.x as f64 - c[0], u.y as f64 - c[1]];
            let dot = g[0] * d[0] + g[1] * d[1];
            if d[0].abs() + d[1].abs() > 0.0 && dot != 0.0 {
                assert!(dot > 0.0);
            }
        }
    }
}
