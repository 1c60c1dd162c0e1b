//! Experiment CLI: evaluate the value function at a state, sweep filter
//! boundaries and safe regions, run the gradient-error study, and simulate
//! filtered closed loops. Every subcommand reads a JSON config, takes a
//! master seed, and writes its artifacts plus a `run.json` manifest into the
//! output directory.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use rpcbf::lab::output::{
    write_boundary_csv, write_grad_study_csv, write_run_manifest, write_safe_region_csv,
    write_trajectory_csv, RunManifest,
};
use rpcbf::lab::{
    self, filter_step, gradient_error_study, simulate, sweep_filter_boundary, sweep_safe_region,
    Experiment, ExperimentConfig, FilterMethod,
};
use rpcbf::rollout::sample_disturbances;
use rpcbf::value::{evaluate, evaluate_pcbf, horizon_sufficiency};

#[derive(Parser)]
#[command(
    name = "rpcbf",
    version,
    about = "Sampled robust policy CBFs and safety filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's value.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the barrier value and gradient at one state.
    Value {
        /// Comma-separated state components, e.g. `0.0,1.0`.
        #[arg(allow_hyphen_values = true)]
        state: String,
        #[command(flatten)]
        common: Common,
    },
    /// Barrier values over a planar state grid (`boundary.csv`).
    SweepBoundary {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop safety over a planar state grid (`safe_region.csv`).
    SweepSafeRegion {
        #[command(flatten)]
        common: Common,
    },
    /// Gradient-error comparison on the braking scenario (`grad_study.csv`).
    GradStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Filtered closed-loop runs under sampled plant disturbances
    /// (`traj_<i>.csv`).
    Simulate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common, command: &str) -> anyhow::Result<(ExperimentConfig, Experiment)> {
    let text = fs::read_to_string(&common.config)
        .with_context(|| format!("reading config {}", common.config.display()))?;
    let config = ExperimentConfig::from_json(&text).context("parsing config")?;
    let experiment = config.build(common.seed).context("building experiment")?;
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let manifest = RunManifest::new(command, experiment.master_seed, &config);
    write_run_manifest(&common.out.join("run.json"), &manifest)?;
    Ok((config, experiment))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Value { state, common } => {
            let (_, exp) = load(&common, "value")?;
            let sys = exp.system_dyn();
            let state: Vec<f64> = state
                .split(',')
                .map(|tok| tok.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("parsing state `{state}`"))?;
            if state.len() != sys.state_dim() {
                bail!(
                    "state has {} components, system needs {}",
                    state.len(),
                    sys.state_dim()
                );
            }
            let x = DVector::from_row_slice(&state);
            let est = match exp.method {
                FilterMethod::Pcbf => evaluate_pcbf(sys, &exp.rollout_policy, &exp.value, &x)?,
                _ => evaluate(sys, &exp.rollout_policy, &exp.value, &x)?,
            };
            let (sufficient, delta) =
                horizon_sufficiency(sys, &exp.rollout_policy, &exp.value, &x, 1e-3)?;
            println!("value: {}", est.value);
            println!(
                "gradient: [{}]",
                est.gradient
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!("argmax_sample: {}", est.argmax_sample);
            println!("argmax_time: {}", est.argmax_time);
            println!(
                "horizon_sufficient: {sufficient} (50% extension moves the value by {delta})"
            );
            let report = serde_json::json!({
                "value": est.value,
                "gradient": est.gradient.iter().copied().collect::<Vec<f64>>(),
                "argmax_sample": est.argmax_sample,
                "argmax_time": est.argmax_time,
                "horizon_sufficient": sufficient,
                "horizon_delta": delta,
            });
            fs::write(
                common.out.join("value.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
        }
        Command::SweepBoundary { common } => {
            let (config, exp) = load(&common, "sweep-boundary")?;
            let dims = config
                .experiment
                .grid
                .as_ref()
                .context("config needs experiment.grid for sweep-boundary")?;
            let sweep = sweep_filter_boundary(&exp, dims)?;
            report_cell_errors(&sweep.errors);
            write_boundary_csv(&common.out.join("boundary.csv"), &sweep)?;
            println!(
                "boundary.csv: {} cells, {} inside the zero sublevel set, {} errors",
                sweep.grid.cell_count(),
                sweep.sublevel_count(),
                sweep.errors.len()
            );
        }
        Command::SweepSafeRegion { common } => {
            let (config, exp) = load(&common, "sweep-safe-region")?;
            let dims = config
                .experiment
                .grid
                .as_ref()
                .context("config needs experiment.grid for sweep-safe-region")?;
            let horizon = config
                .experiment
                .eval_horizon
                .context("config needs experiment.eval_horizon")?;
            let samples = config
                .experiment
                .eval_samples
                .context("config needs experiment.eval_samples")?;
            let sweep = sweep_safe_region(&exp, dims, horizon, samples)?;
            report_cell_errors(&sweep.errors);
            write_safe_region_csv(&common.out.join("safe_region.csv"), &sweep)?;
            let safe = sweep.safe.iter().filter(|s| **s).count();
            println!(
                "safe_region.csv: {} cells, {} safe, {} errors",
                sweep.grid.cell_count(),
                safe,
                sweep.errors.len()
            );
        }
        Command::GradStudy { common } => {
            let (config, _) = load(&common, "grad-study")?;
            let dt_list = config
                .experiment
                .dt_list
                .as_deref()
                .context("config needs experiment.dt_list")?;
            let rows = gradient_error_study(dt_list, 151, config.value.boundary.into())?;
            write_grad_study_csv(&common.out.join("grad_study.csv"), &rows)?;
            for &dt in dt_list {
                let sub: Vec<_> = rows.iter().filter(|r| r.dt == dt).collect();
                let naive = sub.iter().map(|r| r.naive_err).fold(f64::MIN, f64::max);
                let spline = sub.iter().map(|r| r.spline_err).fold(f64::MIN, f64::max);
                println!("dt={dt}: max naive error {naive:.4}, max spline error {spline:.2e}");
            }
        }
        Command::Simulate { common } => {
            let (config, exp) = load(&common, "simulate")?;
            let x0 = config
                .experiment
                .x0
                .as_ref()
                .context("config needs experiment.x0")?;
            let duration = config
                .experiment
                .duration
                .context("config needs experiment.duration")?;
            let count = config.experiment.eval_samples.unwrap_or(1);
            let x0 = DVector::from_row_slice(x0);
            let steps = (duration / exp.control_dt).round().max(1.0) as usize;
            let plants = sample_disturbances(
                exp.system_dyn(),
                steps,
                count,
                exp.value.vertex_weight,
                lab::plant_seed(exp.master_seed, 0),
            )?;
            let mut safe_count = 0;
            for (i, plant) in plants.iter().enumerate() {
                let rec = simulate(
                    &exp,
                    &x0,
                    duration,
                    plant,
                    lab::filter_seed_base(exp.master_seed, 0, i as u64),
                )?;
                if rec.safe {
                    safe_count += 1;
                }
                write_trajectory_csv(&common.out.join(format!("traj_{i}.csv")), &rec)?;
            }
            println!("{count} trajectories, {safe_count} safe, duration {duration} s");
            // One filter step at x0 summarizes what the filter does there.
            let outcome = filter_step(&exp, &x0, exp.master_seed)?;
            println!(
                "at x0: value {}, status {}, u [{}]",
                outcome.value,
                outcome.status,
                outcome
                    .u
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
    }
    Ok(())
}

fn report_cell_errors(errors: &[rpcbf::lab::sweep::CellError]) {
    for e in errors.iter().take(10) {
        eprintln!("cell ({}, {}): {}", e.i, e.j, e.message);
    }
    if errors.len() > 10 {
        eprintln!("... and {} more cell errors", errors.len() - 10);
    }
}
