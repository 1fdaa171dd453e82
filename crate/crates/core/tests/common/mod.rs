#![allow(dead_code)]

use evmle::config::ExperimentConfig;
use evmle::experiment::synth_stream;
use evmle::synth::EventStream;

/// A 16×16 sensor with a narrow blob circling the middle, small enough that
/// exhaustive oracles run in milliseconds.
pub fn small_config() -> ExperimentConfig {
    ExperimentConfig::with_overrides(
        "",
        &[
            "scene.width=16".into(),
            "scene.height=16".into(),
            "drift.c_base=[8.0, 8.0]".into(),
            "drift.amp_x=3.0".into(),
            "drift.amp_y=3.0".into(),
            "renderer.sigma=1.5".into(),
            "truth.z0=[2.5, 0.0]".into(),
            "synthesis.duration=2.0".into(),
            "estimator.coarse_rows=3".into(),
            "estimator.coarse_cols=3".into(),
            "estimator.mc_samples=64".into(),
            "estimator.n_step=5".into(),
            "ablation.horizons=[1, 2]".into(),
        ],
    )
    .expect("small config")
}

pub fn small_stream() -> (ExperimentConfig, EventStream) {
    let cfg = small_config();
    let stream = synth_stream(&cfg).expect("synthesis");
    (cfg, stream)
}
