//! Ideal contrast-threshold event generation.
//!
//! Log-intensity frames are rendered at a fixed frame rate. Each pixel keeps a
//! reference level; whenever a frame's value differs from the reference by at
//! least the pixel's threshold, events are emitted one threshold step at a
//! time, with timestamps placed by linear interpolation inside the frame
//! interval.

use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::dynamics::{DynamicsParams, StableFocus};
use crate::error::{Error, Result};
use crate::ode::{integrate, IntegratorConfig};
use crate::scene::{PixelCoord, Scene, SensorGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::On => 1.0,
            Polarity::Off => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_i64(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn of_change(delta: f64) -> Self {
        if delta > 0.0 {
            Polarity::On
        } else {
            Polarity::Off
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub u: PixelCoord,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: f64, x: u32, y: u32, p: Polarity) -> Self {
        Self {
            t,
            u: PixelCoord::new(x, y),
            p,
        }
    }
}

/// Stream order: time, then row, column and polarity (`-1` before `+1`).
pub fn event_order(a: &Event, b: &Event) -> Ordering {
    a.t.total_cmp(&b.t)
        .then(a.u.y.cmp(&b.u.y))
        .then(a.u.x.cmp(&b.u.x))
        .then(a.p.cmp(&b.p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub geometry: SensorGeometry,
    pub t0: f64,
    pub t_end: f64,
}

impl EventStream {
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.events.iter().enumerate() {
            if !(e.t >= self.t0 && e.t <= self.t_end) {
                return Err(Error::InvalidConfig(format!(
                    "event {k} at t = {} outside [{}, {}]",
                    e.t, self.t0, self.t_end
                )));
            }
            if !self.geometry.contains(e.u.x as i64, e.u.y as i64) {
                return Err(Error::InvalidConfig(format!(
                    "event {k} outside the sensor"
                )));
            }
            if k > 0 && event_order(&self.events[k - 1], e) == Ordering::Greater {
                return Err(Error::InvalidConfig(format!("event {k} out of order")));
            }
        }
        Ok(())
    }

    /// Events with `t_a < t <= t_b`, located by binary search.
    pub fn window(&self, t_a: f64, t_b: f64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t <= t_a);
        let hi = self.events.partition_point(|e| e.t <= t_b);
        &self.events[lo..hi.max(lo)]
    }

    /// Per-pixel event counts, row-major.
    pub fn counts(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.geometry.num_pixels()];
        for e in &self.events {
            c[self.geometry.index(e.u)] += 1;
        }
        c
    }

    /// Pixels that emitted at least one event.
    pub fn active_pixels(&self) -> Vec<bool> {
        self.counts().into_iter().map(|c| c > 0).collect()
    }
}

/// Dense per-pixel contrast thresholds, row-major (`row = y`).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdField {
    pub geometry: SensorGeometry,
    pub values: Vec<f64>,
}

impl ThresholdField {
    pub fn new(geometry: SensorGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.num_pixels() {
            return Err(Error::Dimension {
                expected: geometry.num_pixels(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|&c| !(c > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "threshold at pixel {:?} is not positive ({})",
                geometry.coord(i),
                values[i]
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn at(&self, u: PixelCoord) -> f64 {
        self.values[self.geometry.index(u)]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.geometry,
            self.values.iter().map(|c| c * factor).collect(),
        )
    }
}

/// Coefficients of the sinusoidal ground-truth threshold pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPattern {
    pub c_base: f64,
    pub amp_x: f64,
    pub amp_y: f64,
}

impl Default for ThresholdPattern {
    fn default() -> Self {
        Self {
            c_base: 0.2,
            amp_x: 0.03,
            amp_y: 0.02,
        }
    }
}

/// `C(u) = C_base + a_x sin(2π u_x / W) + a_y cos(2π u_y / H)`.
pub fn threshold_field(
    geometry: SensorGeometry,
    pattern: ThresholdPattern,
) -> Result<ThresholdField> {
    let (w, h) = (geometry.width as f64, geometry.height as f64);
    let values = geometry
        .pixels()
        .map(|u| {
            pattern.c_base
                + pattern.amp_x * (2.0 * PI * u.x as f64 / w).sin()
                + pattern.amp_y * (2.0 * PI * u.y as f64 / h).cos()
        })
        .collect();
    ThresholdField::new(geometry, values)
}

/// Ground-truth field with the default 0.03 / 0.02 modulation.
pub fn true_threshold_field(geometry: SensorGeometry, c_base: f64) -> Result<ThresholdField> {
    threshold_field(
        geometry,
        ThresholdPattern {
            c_base,
            ..ThresholdPattern::default()
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub fps: f64,
    pub duration: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            fps: 120.0,
            duration: 13.0,
        }
    }
}

/// Latent offsets at every frame time `j / fps`, `j = 0..=⌊T fps⌋`.
pub fn latent_frames(
    theta: DynamicsParams,
    z0: [f64; 2],
    cfg: &SynthesisConfig,
) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let frames = (cfg.duration * cfg.fps + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=frames).map(|j| j as f64 / cfg.fps).collect();
    let t_end = *times.last().unwrap();
    let icfg = IntegratorConfig::for_fps(cfg.fps);
    let traj = integrate(
        &StableFocus,
        &theta.to_vec(),
        &z0,
        0.0,
        t_end,
        &icfg,
        &times,
    )?;
    let zs = times
        .iter()
        .map(|&t| {
            let i = traj.index_of(t).expect("frame time is a stop");
            let s = traj.state(i);
            [s[0], s[1]]
        })
        .collect();
    Ok((times, zs))
}

/// Generate the ideal contrast-threshold event stream on `[0, T]`.
pub fn synthesize_events(
    scene: &Scene,
    theta: DynamicsParams,
    z0: [f64; 2],
    field: &ThresholdField,
    cfg: &SynthesisConfig,
) -> Result<EventStream> {
    scene.validate()?;
    if !(cfg.fps > 0.0 && cfg.duration > 0.0) {
        return Err(Error::InvalidConfig(
            "fps and duration must be positive".to_string(),
        ));
    }
    if field.geometry != scene.geometry {
        return Err(Error::InvalidConfig(
            "threshold field geometry mismatch".to_string(),
        ));
    }
    let geometry = scene.geometry;
    let (times, zs) = latent_frames(theta, z0, cfg)?;

    let mut reference = scene.render_frame(times[0], &zs[0]);
    if reference.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "rendered log-intensity",
            t: times[0],
        });
    }
    let mut previous = reference.clone();
    let mut events = Vec::new();
    for j in 1..times.len() {
        let frame = scene.render_frame(times[j], &zs[j]);
        for (idx, &l_new) in frame.iter().enumerate() {
            if !l_new.is_finite() {
                return Err(Error::NonFinite {
                    what: "rendered log-intensity",
                    t: times[j],
                });
            }
            let c = field.values[idx];
            let l_old = previous[idx];
            let mut l_ref = reference[idx];
            while (l_new - l_ref).abs() >= c {
                let p = Polarity::of_change(l_new - l_ref);
                let level = l_ref + p.sign() * c;
                let frac = ((level - l_old) / (l_new - l_old)).clamp(0.0, 1.0);
                let t = ((j - 1) as f64 + frac) / cfg.fps;
                let u = geometry.coord(idx);
                events.push(Event { t, u, p });
                l_ref = level;
            }
            reference[idx] = l_ref;
        }
        previous = frame;
    }
    events.sort_by(event_order);
    events.dedup_by(|a, b| event_order(a, b) == Ordering::Equal);
    Ok(EventStream {
        events,
        geometry,
        t0: 0.0,
        t_end: *times.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_stream(cfg: SynthesisConfig) -> (Scene, ThresholdField, EventStream) {
        let scene = Scene::default();
        let field = true_threshold_field(scene.geometry, 0.2).unwrap();
        let s = synthesize_events(
            &scene,
            DynamicsParams::new(0.265, 7.52),
            [12.0, 0.0],
            &field,
            &cfg,
        )
        .unwrap();
        (scene, field, s)
    }

    #[test]
    fn threshold_field_values() {
        let g = SensorGeometry::new(64, 64).unwrap();
        let f = true_threshold_field(g, 0.2).unwrap();
        assert!((f.at(PixelCoord::new(0, 0)) - 0.22).abs() < 1e-15);
        assert!((f.at(PixelCoord::new(32, 0)) - 0.22).abs() < 1e-15);
        let mean = f.values.iter().sum::<f64>() / f.values.len() as f64;
        assert!((mean - 0.2).abs() < 1e-3);
        assert!(true_threshold_field(g, 0.04).is_err());
    }

    #[test]
    fn static_scene_is_silent() {
        let mut scene = Scene::default();
        scene.drift.amp_x = 0.0;
        scene.drift.amp_y = 0.0;
        let field = true_threshold_field(scene.geometry, 0.2).unwrap();
        let cfg = SynthesisConfig {
            fps: 120.0,
            duration: 2.0,
        };
        let s = synthesize_events(
            &scene,
            DynamicsParams::new(0.265, 7.52),
            [0.0, 0.0],
            &field,
            &cfg,
        )
        .unwrap();
        assert!(s.events.is_empty());
    }

    #[test]
    fn stream_is_sorted_within_bounds_and_deterministic() {
        let cfg = SynthesisConfig {
            fps: 120.0,
            duration: 1.5,
        };
        let (_, _, a) = paper_stream(cfg);
        let (_, _, b) = paper_stream(cfg);
        assert!(!a.events.is_empty());
        a.validate().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn larger_thresholds_never_add_events() {
        let cfg = SynthesisConfig {
            fps: 120.0,
            duration: 1.5,
        };
        let (scene, field, base) = paper_stream(cfg);
        let theta = DynamicsParams::new(0.265, 7.52);
        let big = field.scaled(10.0).unwrap();
        let s = synthesize_events(&scene, theta, [12.0, 0.0], &big, &cfg).unwrap();
        let (cb, cs) = (base.counts(), s.counts());
        assert!(cs.iter().zip(&cb).all(|(s, b)| s <= b));
    }

    #[test]
    fn per_pixel_counts_are_not_monotone_in_general() {
        // A signal bouncing between 1.2 and 2.4 fires every swing with C = 1.2
        // but never with C = 1 once its reference has settled at 2.
        let c_small = reset_rule_count(&[0.0, 2.4, 1.2, 2.4, 1.2, 2.4], 1.0);
        let c_large = reset_rule_count(&[0.0, 2.4, 1.2, 2.4, 1.2, 2.4], 1.2);
        assert_eq!((c_small, c_large), (2, 6));
    }

    /// Event count of the reference-reset rule on a sampled signal.
    fn reset_rule_count(levels: &[f64], c: f64) -> usize {
        let mut l_ref = levels[0];
        let mut n = 0;
        for &l in &levels[1..] {
            while (l - l_ref).abs() >= c - 1e-12 {
                l_ref += c * (l - l_ref).signum();
                n += 1;
            }
        }
        n
    }

    #[test]
    fn polarity_and_reset_follow_ground_truth() {
        // Consecutive events at one pixel are one threshold apart in the true
        // log-intensity, up to the linear-interpolation error within a frame.
        let cfg = SynthesisConfig {
            fps: 1200.0,
            duration: 1.0,
        };
        let (scene, field, s) = paper_stream(cfg);
        let theta = DynamicsParams::new(0.265, 7.52).to_vec();
        let icfg = IntegratorConfig::new(1e-4).unwrap();
        let mut last: Vec<Option<(f64, f64)>> = vec![None; scene.geometry.num_pixels()];
        let mut times: Vec<f64> = s.events.iter().map(|e| e.t).collect();
        times.dedup();
        let tr = integrate(
            &StableFocus,
            &theta,
            &[12.0, 0.0],
            0.0,
            s.t_end,
            &icfg,
            &times,
        )
        .unwrap();
        let initial = scene.render_frame(0.0, &[12.0, 0.0]);
        let mut checked = 0;
        for e in &s.events {
            let idx = scene.geometry.index(e.u);
            let z = tr.state(tr.index_of(e.t).unwrap());
            let l = scene.log_intensity(e.u, e.t, z);
            let c = field.values[idx];
            let (_, l_prev) = last[idx].unwrap_or((0.0, initial[idx]));
            let delta = l - l_prev;
            // Within one frame the linear interpolation error of the blob's
            // log-intensity stays far below the threshold.
            assert!(
                (delta.abs() - c).abs() < 0.02,
                "|ΔL| = {} vs C = {c}",
                delta.abs()
            );
            assert_eq!(Polarity::of_change(delta), e.p);
            // Reference moves by exactly one threshold per event.
            last[idx] = Some((e.t, l_prev + e.p.sign() * c));
            checked += 1;
        }
        assert!(checked > 1000);
    }
}
