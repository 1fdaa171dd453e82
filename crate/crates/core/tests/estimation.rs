mod common;

use evmle::estimator::run_receding_horizon;
use evmle::experiment::learning_curve_csv;
use evmle::point_process::{window_nll, Params, PerPixelMemory, Window};

fn without_timing(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn zero_steps_keep_the_initialization() {
    let (cfg, stream) = common::small_stream();
    let model = cfg.model().unwrap();
    let mut ecfg = cfg.estimator_config(2);
    ecfg.n_step = 0;
    let trace = run_receding_horizon(&stream, &model, &ecfg).unwrap();
    assert_eq!(trace.records.len(), 5);
    for r in &trace.records {
        assert_eq!(r.theta, ecfg.init_theta.to_vec());
        assert_eq!(r.psi, ecfg.init_psi);
    }
}

#[test]
fn runs_are_reproducible_apart_from_timing() {
    let (cfg, stream) = common::small_stream();
    let model = cfg.model().unwrap();
    let ecfg = cfg.estimator_config(2);
    let a = run_receding_horizon(&stream, &model, &ecfg).unwrap();
    let b = run_receding_horizon(&stream, &model, &ecfg).unwrap();
    assert_eq!(
        without_timing(&learning_curve_csv(&a)),
        without_timing(&learning_curve_csv(&b))
    );
    assert_eq!(a.final_params, b.final_params);
}

#[test]
fn truth_is_nearly_stationary() {
    let (cfg, stream) = common::small_stream();
    let model = cfg.model().unwrap();
    let mut ecfg = cfg.estimator_config(3);
    ecfg.init_theta = cfg.true_theta();
    ecfg.init_psi.c_base = cfg.truth.c_base;
    ecfg.lr = 1e-3;
    ecfg.lr_threshold = 1e-3;
    let trace = run_receding_horizon(&stream, &model, &ecfg).unwrap();
    let truth = cfg.true_theta().to_vec();
    for (est, t) in trace.final_params.theta.iter().zip(&truth) {
        assert!((est - t).abs() <= 0.05 * t, "{est} vs {t}");
    }
}

#[test]
fn first_update_lowers_its_window_objective() {
    let (cfg, stream) = common::small_stream();
    let model = cfg.model().unwrap();
    let ecfg = cfg.estimator_config(2);
    let trace = run_receding_horizon(&stream, &model, &ecfg).unwrap();
    let z0 = cfg.truth.z0.to_vec();
    let mem = PerPixelMemory::initial(&model.scene, 0.0, &z0);
    let w = Window {
        t_a: 0.0,
        t_b: ecfg.dt_upd,
        events: stream.window(0.0, ecfg.dt_upd),
        memory: &mem,
        z_a: &z0,
    };
    let init = Params {
        theta: ecfg.init_theta.to_vec(),
        psi: ecfg.init_psi.clone(),
    };
    let sample = ecfg.mc.sample_for(model.scene.geometry, 1, 0);
    let before = window_nll(&model, &w, &init, &sample).unwrap().nll;
    assert!(
        trace.records[0].nll < before,
        "{} !< {before}",
        trace.records[0].nll
    );
}

#[test]
fn window_length_is_capped_by_the_horizon() {
    let (cfg, stream) = common::small_stream();
    let ecfg = cfg.estimator_config(2);
    let trace = run_receding_horizon(&stream, &cfg.model().unwrap(), &ecfg).unwrap();
    for r in &trace.records {
        let t_a = ecfg.tau(ecfg.window_start(r.m));
        assert!(r.tau - t_a <= 2.0 * ecfg.dt_upd + 1e-12);
        assert_eq!(r.events, stream.window(t_a, r.tau).len());
    }
}
