use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use evmle::config::ExperimentConfig;
use evmle::experiment::{cmd_ablate, cmd_estimate, cmd_gradcheck, cmd_synth, synth_stream};
use evmle::gradient::AdjointOptions;
use evmle::io::read_events;

#[derive(Parser)]
#[command(
    name = "evmle",
    version,
    about = "Event-camera synthesis and receding-horizon MLE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for Monte Carlo sampling (overrides `estimator.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. `--set estimator.horizon=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("estimator.seed={s}"));
        }
        let cfg = ExperimentConfig::load(self.config.as_deref(), &overrides)
            .context("loading configuration")?;
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the event stream and the true threshold map.
    Synth(Common),
    /// Run the receding-horizon estimator.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Event file to estimate from; synthesized from the configuration when omitted.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Sweep the horizon length.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        events: Option<PathBuf>,
        /// Comma-separated horizons (overrides `ablation.horizons`).
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
    },
    /// Compare adjoint gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Negate the adjoint's event jumps (the check should then fail).
        #[arg(long, hide = true)]
        flip_event_jumps: bool,
    },
}

fn stream_for(
    cfg: &ExperimentConfig,
    events: Option<&PathBuf>,
) -> Result<evmle::synth::EventStream> {
    match events {
        Some(p) => {
            let span = Some((0.0, cfg.synthesis().duration));
            read_events(p, cfg.geometry()?, span)
                .with_context(|| format!("reading {}", p.display()))
        }
        None => Ok(synth_stream(cfg)?),
    }
}

fn run() -> Result<bool> {
    match Cli::parse().command {
        Command::Synth(common) => {
            let (cfg, out) = common.load()?;
            let o = cmd_synth(&cfg, &out)?;
            println!(
                "{} events written to {}",
                o.stream.events.len(),
                o.events.display()
            );
            println!("threshold map written to {}", o.thresholds.display());
            for s in &o.snapshots {
                println!("snapshot {}", s.display());
            }
        }
        Command::Estimate { common, events } => {
            let (cfg, out) = common.load()?;
            let stream = stream_for(&cfg, events.as_ref())?;
            let o = cmd_estimate(&cfg, &stream, &out)?;
            let p = &o.trace.final_params;
            println!(
                "alpha = {:.6}  omega = {:.6}  c_base = {:.6}",
                p.theta[0], p.theta[1], p.psi.c_base
            );
            println!(
                "rmse_alpha = {:.3e}  rmse_omega = {:.3e}  rmse_c = {:.3e}  mean update {:.1} ms",
                o.report.rmse_alpha, o.report.rmse_omega, o.report.rmse_c, o.report.mean_update_ms
            );
            println!("learning curve written to {}", o.learning_curve.display());
        }
        Command::Ablate {
            common,
            events,
            horizons,
        } => {
            let (cfg, out) = common.load()?;
            let stream = stream_for(&cfg, events.as_ref())?;
            let horizons = if horizons.is_empty() {
                cfg.ablation.horizons.clone()
            } else {
                horizons
            };
            let mut ok = true;
            for (h, row) in cmd_ablate(&cfg, &stream, &horizons, &out)? {
                match row {
                    Ok(r) => println!("{}", r.csv_row()),
                    Err(e) => {
                        ok = false;
                        eprintln!("H = {h}: {e}");
                    }
                }
            }
            println!("ablation written to {}", out.join("ablation.csv").display());
            return Ok(ok);
        }
        Command::Gradcheck {
            common,
            flip_event_jumps,
        } => {
            let (cfg, _) = common.load()?;
            let stream = synth_stream(&cfg)?;
            let report = cmd_gradcheck(&cfg, &stream, AdjointOptions { flip_event_jumps })?;
            for w in &report.windows {
                println!(
                    "window ({:.1}, {:.1}]  events {:>6}  max rel err {:.3e} (param {})  kink-free {:.3e}  kinked {}",
                    w.t_a, w.t_b, w.events, w.max_rel_err, w.worst, w.max_rel_err_smooth, w.kinked
                );
            }
            let verdict = if report.passed() { "PASS" } else { "FAIL" };
            println!(
                "{verdict}: worst relative error {:.3e} (tolerance {:.1e})",
                report.max_rel_err, report.tolerance
            );
            println!(
                "kink-free components: worst relative error {:.3e}; {} components straddle a residual sign change",
                report.max_rel_err_smooth,
                report.kinked()
            );
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
