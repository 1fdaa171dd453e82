//! The experiment commands: synthesis, estimation, horizon ablation and
//! gradient checking, plus their file outputs and metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimator::{run_receding_horizon, EstimateTrace};
use crate::gradient::{
    adjoint_gradient_with, finite_difference_gradient, relative_errors, AdjointOptions,
};
use crate::io::{graymap, polarity_graymap, write_events, write_threshold_map};
use crate::point_process::{
    advance_memory, Checkpoint, Params, PerPixelMemory, ThresholdParams, Window,
};
use crate::synth::{latent_frames, synthesize_events, EventStream, ThresholdField};

pub const LEARNING_CURVE_HEADER: &str = "m,tau,alpha,omega,c_base,nll,update_ms";
pub const ABLATION_HEADER: &str = "H,rmse_alpha,rmse_omega,rmse_c,active_pixels,mean_update_ms";

/// Synthesize the configured stream in memory.
pub fn synth_stream(cfg: &ExperimentConfig) -> Result<EventStream> {
    let t = &cfg.truth;
    synthesize_events(
        &cfg.scene()?,
        cfg.true_theta(),
        t.z0,
        &cfg.true_field()?,
        &cfg.synthesis(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub events: PathBuf,
    pub thresholds: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub stream: EventStream,
}

/// Write `events.csv`, `thresholds_true.csv` and any requested snapshots.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<SynthOutput> {
    fs::create_dir_all(out)?;
    let stream = synth_stream(cfg)?;
    let events = out.join("events.csv");
    write_events(&stream, &events)?;
    let thresholds = out.join("thresholds_true.csv");
    write_threshold_map(&cfg.true_field()?, &thresholds)?;

    let mut snapshots = Vec::new();
    if !cfg.synthesis.snapshot_times.is_empty() {
        let scene = cfg.scene()?;
        let g = scene.geometry;
        let (times, zs) = latent_frames(cfg.true_theta(), cfg.truth.z0, &cfg.synthesis())?;
        for &t in &cfg.synthesis.snapshot_times {
            // Nearest rendered frame at or before `t`.
            let j = times.partition_point(|&s| s <= t).saturating_sub(1);
            let frame: Vec<f64> = scene
                .render_frame(times[j], &zs[j])
                .iter()
                .map(|l| l.exp())
                .collect();
            let hi = frame.iter().copied().fold(0.0, f64::max);
            let p = out.join(format!("frame_{t:.3}.pgm"));
            fs::write(&p, graymap(g.width, g.height, &frame, 0.0, hi))?;
            snapshots.push(p);
            let p = out.join(format!("polarity_{t:.3}.pgm"));
            let recent = stream.window(t - cfg.synthesis.snapshot_span, t);
            fs::write(&p, polarity_graymap(g, recent))?;
            snapshots.push(p);
        }
    }
    Ok(SynthOutput {
        events,
        thresholds,
        snapshots,
        stream,
    })
}

/// Root mean square of `est − truth` over the active pixels.
pub fn rmse_threshold(
    est: &ThresholdField,
    truth: &ThresholdField,
    active: &[bool],
) -> Result<f64> {
    if est.geometry != truth.geometry || active.len() != truth.values.len() {
        return Err(Error::Dimension {
            expected: truth.values.len(),
            got: active.len().min(est.values.len()),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((e, t), &a) in est.values.iter().zip(&truth.values).zip(active) {
        if a {
            sum += (e - t) * (e - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyActiveSet);
    }
    Ok((sum / n as f64).sqrt())
}

pub fn learning_curve_csv(trace: &EstimateTrace) -> String {
    let mut s = String::from(LEARNING_CURVE_HEADER);
    s.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.3}",
            r.m, r.tau, r.theta[0], r.theta[1], r.psi.c_base, r.nll, r.update_ms
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub horizon: usize,
    pub rmse_alpha: f64,
    pub rmse_omega: f64,
    pub rmse_c: f64,
    pub active_pixels: usize,
    pub mean_update_ms: f64,
}

impl RmseReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.horizon,
            self.rmse_alpha,
            self.rmse_omega,
            self.rmse_c,
            self.active_pixels,
            self.mean_update_ms
        )
    }
}

/// Final-estimate errors of one run.
pub fn rmse_report(
    cfg: &ExperimentConfig,
    stream: &EventStream,
    trace: &EstimateTrace,
    horizon: usize,
) -> Result<RmseReport> {
    let model = cfg.model()?;
    let est = model.coarse.field(&trace.final_params.psi)?;
    let active = stream.active_pixels();
    let rmse_c = rmse_threshold(&est, &cfg.true_field()?, &active)?;
    let times: Vec<f64> = trace.records.iter().map(|r| r.update_ms).collect();
    Ok(RmseReport {
        horizon,
        rmse_alpha: (trace.final_params.theta[0] - cfg.truth.alpha).abs(),
        rmse_omega: (trace.final_params.theta[1] - cfg.truth.omega).abs(),
        rmse_c,
        active_pixels: active.iter().filter(|&&a| a).count(),
        mean_update_ms: if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        },
    })
}

pub fn estimate(
    cfg: &ExperimentConfig,
    stream: &EventStream,
    horizon: usize,
) -> Result<EstimateTrace> {
    run_receding_horizon(stream, &cfg.model()?, &cfg.estimator_config(horizon))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub trace: EstimateTrace,
    pub report: RmseReport,
    pub learning_curve: PathBuf,
    pub thresholds: PathBuf,
    pub summary: PathBuf,
}

/// Run the estimator at the configured horizon and write its outputs.
pub fn cmd_estimate(
    cfg: &ExperimentConfig,
    stream: &EventStream,
    out: &Path,
) -> Result<EstimateOutput> {
    fs::create_dir_all(out)?;
    let h = cfg.estimator.horizon;
    let trace = estimate(cfg, stream, h)?;
    let report = rmse_report(cfg, stream, &trace, h)?;
    let learning_curve = out.join("learning_curve.csv");
    fs::write(&learning_curve, learning_curve_csv(&trace))?;
    let thresholds = out.join("thresholds_est.csv");
    write_threshold_map(
        &cfg.model()?.coarse.field(&trace.final_params.psi)?,
        &thresholds,
    )?;
    let summary = out.join("summary.txt");
    let p = &trace.final_params;
    fs::write(
        &summary,
        format!(
            "H = {}\nalpha = {}\nomega = {}\nc_base = {}\nrmse_alpha = {}\nrmse_omega = {}\nrmse_c = {}\nactive_pixels = {}\nmean_update_ms = {:.3}\n",
            h, p.theta[0], p.theta[1], p.psi.c_base, report.rmse_alpha, report.rmse_omega, report.rmse_c,
            report.active_pixels, report.mean_update_ms
        ),
    )?;
    Ok(EstimateOutput {
        trace,
        report,
        learning_curve,
        thresholds,
        summary,
    })
}

/// One estimation run per horizon. A failed run is reported in its row and
/// does not stop the sweep.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    stream: &EventStream,
    horizons: &[usize],
    out: &Path,
) -> Result<Vec<(usize, Result<RmseReport>)>> {
    fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(horizons.len());
    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for &h in horizons {
        let row = if h == 0 {
            Err(Error::InvalidConfig(
                "horizon must be at least 1".to_string(),
            ))
        } else {
            estimate(cfg, stream, h).and_then(|trace| rmse_report(cfg, stream, &trace, h))
        };
        match &row {
            Ok(r) => csv.push_str(&r.csv_row()),
            Err(_) => csv.push_str(&format!("{h},NaN,NaN,NaN,0,NaN")),
        }
        csv.push('\n');
        rows.push((h, row));
    }
    fs::write(out.join("ablation.csv"), csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowCheck {
    pub t_a: f64,
    pub t_b: f64,
    pub events: usize,
    pub max_rel_err: f64,
    /// Parameter index of the worst component.
    pub worst: usize,
    /// Worst error over components whose difference quotient does not
    /// straddle a residual sign change.
    pub max_rel_err_smooth: f64,
    /// Number of components where it does.
    pub kinked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub windows: Vec<WindowCheck>,
    pub max_rel_err: f64,
    pub max_rel_err_smooth: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    /// Verdict restricted to components where central differences are a
    /// valid oracle.
    pub fn passed_smooth(&self) -> bool {
        self.max_rel_err_smooth <= self.tolerance
    }

    pub fn kinked(&self) -> usize {
        self.windows.iter().map(|w| w.kinked).sum()
    }
}

/// Relative-error floor for gradient comparison: components smaller than
/// `1e-8` of the largest gradient entry are compared in absolute terms.
pub fn gradient_floor(reference: &[f64]) -> f64 {
    1e-8 * reference.iter().fold(1.0f64, |m, g| m.max(g.abs()))
}

/// Adjoint versus central differences on random windows of the configured
/// stream, at random parameters near the truth.
pub fn cmd_gradcheck(
    cfg: &ExperimentConfig,
    stream: &EventStream,
    opts: AdjointOptions,
) -> Result<GradcheckReport> {
    let model = cfg.model()?;
    let gc = &cfg.gradcheck;
    let mc = cfg.mc();
    let dt = cfg.estimator.dt_upd;
    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let total = cfg.estimator_config(1).num_updates(stream.t_end);
    let z0 = cfg.truth.z0.to_vec();
    let truth_theta = cfg.true_theta().to_vec();
    let mut windows = Vec::with_capacity(gc.windows);
    for w in 0..gc.windows {
        let len = rng.gen_range(1..=gc.max_updates.min(total).max(1));
        let start = rng.gen_range(0..=total.saturating_sub(len));
        let (t_a, t_b) = (start as f64 * dt, (start + len) as f64 * dt);

        let mut memory = PerPixelMemory::initial(&model.scene, 0.0, &z0);
        let cp = Checkpoint {
            t: 0.0,
            z: z0.clone(),
        };
        let cp = advance_memory(
            &model.scene,
            model.field.as_ref(),
            &model.integrator,
            &truth_theta,
            &mut memory,
            &cp,
            stream.window(0.0, t_a),
            t_a,
        )?;

        let jitter =
            |rng: &mut ChaCha8Rng, v: f64| v * (1.0 + rng.gen_range(-gc.spread..gc.spread));
        let theta = truth_theta.iter().map(|&v| jitter(&mut rng, v)).collect();
        let mut psi = ThresholdParams::uniform(
            jitter(&mut rng, cfg.truth.c_base),
            cfg.estimator.coarse_rows,
            cfg.estimator.coarse_cols,
        );
        for v in psi.grid.iter_mut() {
            *v = rng.gen_range(-0.03..0.03);
        }
        let params = Params { theta, psi };
        let window = Window {
            t_a,
            t_b,
            events: stream.window(t_a, t_b),
            memory: &memory,
            z_a: &cp.z,
        };
        let sample = mc.sample_for(model.scene.geometry, 1_000_000 + w as u64, 0);
        let adj = adjoint_gradient_with(&model, &window, &params, &sample, opts)?.to_vec();
        let fd = finite_difference_gradient(&model, &window, &params, &sample, gc.step)?;
        let errs = relative_errors(&adj, &fd.grad, gradient_floor(&fd.grad));
        let max_rel_err_smooth = errs
            .iter()
            .zip(&fd.kinked)
            .filter(|(_, &k)| !k)
            .fold(0.0, |m, (&e, _)| f64::max(m, e));
        let (worst, max_rel_err) = errs
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
        windows.push(WindowCheck {
            t_a,
            t_b,
            events: window.events.len(),
            max_rel_err,
            worst,
            max_rel_err_smooth,
            kinked: fd.kinked.iter().filter(|&&k| k).count(),
        });
    }
    let max_rel_err = windows.iter().map(|w| w.max_rel_err).fold(0.0, f64::max);
    let max_rel_err_smooth = windows
        .iter()
        .map(|w| w.max_rel_err_smooth)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        windows,
        max_rel_err,
        max_rel_err_smooth,
        tolerance: gc.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SensorGeometry;

    fn g() -> SensorGeometry {
        SensorGeometry::new(8, 4).unwrap()
    }

    #[test]
    fn rmse_identical_is_zero_and_offset_is_offset() {
        let truth =
            ThresholdField::new(g(), (0..32).map(|i| 0.1 + 0.001 * i as f64).collect()).unwrap();
        let active = vec![true; 32];
        assert_eq!(rmse_threshold(&truth, &truth, &active).unwrap(), 0.0);
        let shifted =
            ThresholdField::new(g(), truth.values.iter().map(|v| v + 0.01).collect()).unwrap();
        assert!((rmse_threshold(&shifted, &truth, &active).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rmse_uses_only_active_pixels() {
        let truth = ThresholdField::new(g(), vec![0.2; 32]).unwrap();
        let mut est = truth.clone();
        est.values[0] = 0.5;
        est.values[1] = 0.23;
        let mut active = vec![false; 32];
        active[1] = true;
        active[2] = true;
        let expected = ((0.03f64 * 0.03 + 0.0) / 2.0).sqrt();
        assert!((rmse_threshold(&est, &truth, &active).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            rmse_threshold(&est, &truth, &[false; 32]),
            Err(Error::EmptyActiveSet)
        ));
    }
}
