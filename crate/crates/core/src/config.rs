//! Experiment configuration document.
//!
//! Every key has a default, so an empty document describes the reference
//! experiment. Unknown keys are rejected. Individual keys can be overridden
//! with dotted paths, e.g. `estimator.horizon=7`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsParams, StableFocus};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::ode::IntegratorConfig;
use crate::optim::{AdamConfig, OptimizerKind};
use crate::point_process::{
    CoarseGrid, IntensityHyper, McConfig, Model, ResamplePolicy, ThresholdParams,
};
use crate::scene::{DriftConfig, RendererConfig, Scene, SensorGeometry};
use crate::synth::{threshold_field, SynthesisConfig, ThresholdField, ThresholdPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub width: usize,
    pub height: usize,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub c_base: [f64; 2],
    pub amp_x: f64,
    pub amp_y: f64,
    pub period_x: f64,
    pub period_y: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        let d = DriftConfig::default();
        Self {
            c_base: d.c_base,
            amp_x: d.amp_x,
            amp_y: d.amp_y,
            period_x: d.period_x,
            period_y: d.period_y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RendererSection {
    pub background: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub eps: f64,
}

impl Default for RendererSection {
    fn default() -> Self {
        let r = RendererConfig::default();
        Self {
            background: r.background,
            amplitude: r.amplitude,
            sigma: r.sigma,
            eps: r.eps,
        }
    }
}

/// Ground truth used to generate data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthSection {
    pub alpha: f64,
    pub omega: f64,
    /// Latent offset at the start of the stream; also given to the estimator.
    pub z0: [f64; 2],
    pub c_base: f64,
    pub c_amp_x: f64,
    pub c_amp_y: f64,
}

impl Default for TruthSection {
    fn default() -> Self {
        let p = ThresholdPattern::default();
        Self {
            alpha: 0.265,
            omega: 7.52,
            z0: [12.0, 0.0],
            c_base: p.c_base,
            c_amp_x: p.amp_x,
            c_amp_y: p.amp_y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub fps: f64,
    pub duration: f64,
    /// Times at which to write frame and polarity snapshots.
    pub snapshot_times: Vec<f64>,
    /// Polarity snapshots accumulate events over this trailing span (s).
    pub snapshot_span: f64,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            fps: 120.0,
            duration: 13.0,
            snapshot_times: Vec::new(),
            snapshot_span: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensitySection {
    pub lambda0: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for IntensitySection {
    fn default() -> Self {
        let h = IntensityHyper::default();
        Self {
            lambda0: h.lambda0,
            beta: h.beta,
            gamma: h.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub dt_upd: f64,
    pub horizon: usize,
    pub n_step: usize,
    /// Step size for α and ω.
    pub lr: f64,
    /// Step size for C_base and the coarse grid.
    pub lr_threshold: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mc_samples: usize,
    pub mc_policy: ResamplePolicy,
    pub mc_full_enumeration: bool,
    pub seed: u64,
    pub init_alpha: f64,
    pub init_omega: f64,
    pub init_c_base: f64,
    pub coarse_rows: usize,
    pub coarse_cols: usize,
    /// Integrator step bound; `1 / (4 fps)` when absent.
    pub dt_max: Option<f64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            dt_upd: 0.4,
            horizon: 15,
            n_step: 30,
            lr: 5e-2,
            lr_threshold: 5e-4,
            optimizer: OptimizerKind::Adam,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            mc_samples: 512,
            mc_policy: ResamplePolicy::FixedPerWindow,
            mc_full_enumeration: false,
            seed: 0,
            init_alpha: 0.1,
            init_omega: 5.0,
            init_c_base: 0.15,
            coarse_rows: 8,
            coarse_cols: 8,
            dt_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub horizons: Vec<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            horizons: (1..=19).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub windows: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Window lengths are drawn as `k · dt_upd` with `k` in `1..=max_updates`.
    pub max_updates: usize,
    /// Parameters are drawn within this relative distance of the truth.
    pub spread: f64,
    pub seed: u64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            windows: 20,
            step: 1e-5,
            tolerance: 1e-4,
            max_updates: 2,
            spread: 0.2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: SceneSection,
    pub drift: DriftSection,
    pub renderer: RendererSection,
    pub truth: TruthSection,
    pub synthesis: SynthesisSection,
    pub intensity: IntensitySection,
    pub estimator: EstimatorSection,
    pub ablation: AblationSection,
    pub gradcheck: GradcheckSection,
    pub output: OutputSection,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(e.to_string())
}

/// Parse the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parse `text` after applying `key.path=value` overrides.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(config_err)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{o}` is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().unwrap();
            let mut table = &mut doc;
            for p in parents {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a section")))?;
            }
            table.insert(last.to_string(), parse_value(raw.trim()));
        }
        let cfg: Self = toml::Value::Table(doc).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene()?.validate()?;
        if !(self.synthesis.fps > 0.0 && self.synthesis.duration > 0.0) {
            return Err(config_err(
                "synthesis.fps and synthesis.duration must be positive",
            ));
        }
        if !(self.intensity.lambda0 >= 0.0 && self.intensity.gamma >= 0.0) {
            return Err(config_err(
                "intensity.lambda0 and intensity.gamma must be nonnegative",
            ));
        }
        if self.estimator.coarse_rows < 2 || self.estimator.coarse_cols < 2 {
            return Err(config_err(
                "the coarse threshold grid needs at least 2x2 nodes",
            ));
        }
        self.estimator_config(self.estimator.horizon).validate()?;
        self.mc().validate(self.geometry()?)?;
        self.integrator()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<SensorGeometry> {
        SensorGeometry::new(self.scene.width, self.scene.height)
    }

    pub fn scene(&self) -> Result<Scene> {
        let d = &self.drift;
        let r = &self.renderer;
        Ok(Scene {
            geometry: self.geometry()?,
            drift: DriftConfig {
                c_base: d.c_base,
                amp_x: d.amp_x,
                amp_y: d.amp_y,
                period_x: d.period_x,
                period_y: d.period_y,
            },
            renderer: RendererConfig {
                background: r.background,
                amplitude: r.amplitude,
                sigma: r.sigma,
                eps: r.eps,
            },
        })
    }

    pub fn true_theta(&self) -> DynamicsParams {
        DynamicsParams::new(self.truth.alpha, self.truth.omega)
    }

    pub fn true_field(&self) -> Result<ThresholdField> {
        threshold_field(
            self.geometry()?,
            ThresholdPattern {
                c_base: self.truth.c_base,
                amp_x: self.truth.c_amp_x,
                amp_y: self.truth.c_amp_y,
            },
        )
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            fps: self.synthesis.fps,
            duration: self.synthesis.duration,
        }
    }

    pub fn hyper(&self) -> IntensityHyper {
        IntensityHyper {
            lambda0: self.intensity.lambda0,
            beta: self.intensity.beta,
            gamma: self.intensity.gamma,
        }
    }

    pub fn integrator(&self) -> Result<IntegratorConfig> {
        match self.estimator.dt_max {
            Some(dt) => IntegratorConfig::new(dt),
            None => Ok(IntegratorConfig::for_fps(self.synthesis.fps)),
        }
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            samples: self.estimator.mc_samples,
            seed: self.estimator.seed,
            policy: self.estimator.mc_policy,
            full_enumeration: self.estimator.mc_full_enumeration,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let scene = self.scene()?;
        Ok(Model {
            coarse: CoarseGrid::new(
                scene.geometry,
                self.estimator.coarse_rows,
                self.estimator.coarse_cols,
            )?,
            scene,
            field: Arc::new(StableFocus),
            hyper: self.hyper(),
            integrator: self.integrator()?,
        })
    }

    pub fn estimator_config(&self, horizon: usize) -> EstimatorConfig {
        let e = &self.estimator;
        EstimatorConfig {
            dt_upd: e.dt_upd,
            horizon,
            n_step: e.n_step,
            lr: e.lr,
            lr_threshold: e.lr_threshold,
            optimizer: e.optimizer,
            adam: AdamConfig {
                beta1: e.adam_beta1,
                beta2: e.adam_beta2,
                eps: e.adam_eps,
            },
            mc: self.mc(),
            init_theta: DynamicsParams::new(e.init_alpha, e.init_omega),
            init_psi: ThresholdParams::uniform(e.init_c_base, e.coarse_rows, e.coarse_cols),
            z0: self.truth.z0.to_vec(),
            tau0: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_experiment() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!((c.scene.width, c.scene.height), (64, 64));
        assert_eq!(c.drift.c_base, [32.0, 32.0]);
        assert_eq!((c.drift.amp_x, c.drift.amp_y), (22.0, 22.0));
        assert_eq!((c.drift.period_x, c.drift.period_y), (1.0, 1.3));
        assert_eq!(
            (
                c.renderer.background,
                c.renderer.amplitude,
                c.renderer.sigma
            ),
            (0.15, 0.75, 2.0)
        );
        assert_eq!(c.renderer.eps, 1e-3);
        assert_eq!((c.synthesis.fps, c.synthesis.duration), (120.0, 13.0));
        assert_eq!((c.truth.alpha, c.truth.omega), (0.265, 7.52));
        assert_eq!(c.truth.c_base, 0.2);
        assert_eq!((c.estimator.dt_upd, c.estimator.n_step), (0.4, 30));
        assert_eq!(c.estimator.mc_samples, 512);
        assert_eq!((c.estimator.coarse_rows, c.estimator.coarse_cols), (8, 8));
        assert_eq!(c.estimator.horizon, 15);
        assert_eq!(c.model().unwrap().integrator.dt_max, 1.0 / 480.0);
    }

    #[test]
    fn round_trip_is_identity() {
        let c = ExperimentConfig::default();
        let text = c.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string(), text);
        let mut d = c.clone();
        d.estimator.dt_max = Some(1e-3);
        d.synthesis.snapshot_times = vec![0.5, 1.0];
        assert_eq!(
            ExperimentConfig::from_toml_str(&d.to_toml_string()).unwrap(),
            d
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[estimator]\nhorizn = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[bogus]\n").is_err());
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::with_overrides(
            "[estimator]\nhorizon = 3\n",
            &[
                "estimator.horizon=7".to_string(),
                "estimator.optimizer=sgd".to_string(),
                "ablation.horizons=[3, 15]".to_string(),
                "estimator.mc_policy=fresh-per-evaluation".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(c.estimator.horizon, 7);
        assert_eq!(c.estimator.optimizer, OptimizerKind::Sgd);
        assert_eq!(c.ablation.horizons, vec![3, 15]);
        assert_eq!(c.estimator.mc_policy, ResamplePolicy::FreshPerEvaluation);
        assert!(ExperimentConfig::with_overrides("", &["estimator.horizon".to_string()]).is_err());
        assert!(
            ExperimentConfig::with_overrides("", &["estimator.horizon=0".to_string()]).is_err()
        );
    }
}
