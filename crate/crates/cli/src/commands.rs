//! Subcommand implementations.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde_json::json;

use arz_control::arz_sim::{
    initial_condition, relative_l2_error, simulate as run_simulation, IcKind, SimConfig,
    TrafficState, Trajectory,
};
use arz_control::control::{
    BacksteppingController, ControlContext, Controller, NoKernelController, NoLawController,
    PiController, PiGains, ZeroController,
};
use arz_control::kernel_solver::{self, kernel_residual, KernelGrid};
use arz_control::neural_op::dataset::{
    gen_kernel_dataset, gen_law_dataset, read_dataset, rho_star_for_lambda2, write_dataset,
};
use arz_control::neural_op::{
    load_model_expecting, measure_eps_kernels, measure_eps_law, save_model,
    train as train_model, DeepONetModel, OperatorKind,
};
use arz_control::traffic_model::{characteristics, equilibrium};
use arz_control::{Error, Result};

use crate::config::ExperimentConfig;
use crate::plots;
use crate::summary::{sha256_hex, write_summary};
use crate::Operator;

impl Operator {
    fn kind(self) -> OperatorKind {
        match self {
            Operator::Kernel => OperatorKind::KernelOperator,
            Operator::Law => OperatorKind::LawOperator,
        }
    }

    fn label(self) -> &'static str {
        self.kind().label()
    }
}

fn benchmark_ic(config: &ExperimentConfig, sim: &SimConfig) -> Result<TrafficState> {
    initial_condition(
        IcKind::Sinusoidal {
            amplitude: config.ic.amplitude,
            wavenumber: config.ic.wavenumber,
        },
        &sim.eq,
        sim,
    )
}

fn load_operator_model(config: &ExperimentConfig, operator: Operator) -> Result<DeepONetModel> {
    let rel = match operator {
        Operator::Kernel => &config.controller.kernel_model,
        Operator::Law => &config.controller.law_model,
    };
    let path = config.model_path(rel);
    load_model_expecting(&path, operator.kind()).map_err(|e| {
        Error::ModelIo(format!(
            "cannot load the {} model from {}: {e}; run `arzctl train --operator {}` first",
            operator.label(),
            path.display(),
            operator.label()
        ))
    })
}

pub fn solve_kernels_cmd_impl(config: &ExperimentConfig) -> Result<(PathBuf, f64, f64, f64)> {
    let params = config.params()?;
    let eq = config.equilibrium()?;
    let chars = characteristics(&eq, &params)?;
    let t0 = Instant::now();
    let pair = kernel_solver::solve_kernels(&chars, params.length, config.kernels.n)?;
    let wall = t0.elapsed();
    let report = kernel_residual(&pair);

    let csv_path = config.out_dir.join("kernels.csv");
    std::fs::write(&csv_path, pair.to_csv())?;

    write_summary(
        config,
        "solve-kernels",
        &[&csv_path],
        json!({
            "lambda1": chars.lambda1,
            "lambda2": chars.lambda2,
            "grid_n": config.kernels.n,
            "res_kw": report.res_kw,
            "res_kv": report.res_kv,
            "res_bc": report.res_bc,
            "residual_tol": config.kernels.residual_tol,
            "solve_seconds": wall.as_secs_f64(),
        }),
        &[],
    )?;

    if report.max() > config.kernels.residual_tol {
        return Err(Error::Numerics(format!(
            "kernel residual {:.3e} exceeds the tolerance {:.3e}",
            report.max(),
            config.kernels.residual_tol
        )));
    }
    Ok((csv_path, report.res_kw, report.res_kv, report.res_bc))
}

pub fn solve_kernels(config: &ExperimentConfig) -> Result<()> {
    let (path, res_kw, res_kv, res_bc) = solve_kernels_cmd_impl(config)?;
    println!(
        "kernels -> {} (residuals: kw {res_kw:.3e}, kv {res_kv:.3e}, bc {res_bc:.3e})",
        path.display()
    );
    Ok(())
}

fn dataset_dir(config: &ExperimentConfig, operator: Operator) -> PathBuf {
    config.out_dir.join(format!("{}_dataset", operator.label()))
}

pub fn gen_dataset(config: &ExperimentConfig, operator: Operator) -> Result<()> {
    let t0 = Instant::now();
    let ds = match operator {
        Operator::Kernel => gen_kernel_dataset(&config.kernel_dataset_config()?)?,
        Operator::Law => gen_law_dataset(&config.law_dataset_config()?)?,
    };
    let dir = dataset_dir(config, operator);
    write_dataset(&ds, &dir)?;
    let wall = t0.elapsed();

    write_summary(
        config,
        "gen-dataset",
        &[&dir],
        json!({
            "operator": operator.label(),
            "n_samples": ds.n_samples(),
            "lambda2_min": ds.lambda2.first(),
            "lambda2_max": ds.lambda2.last(),
            "trunk_points": ds.n_points(),
            "train_samples": ds.train_idx.len(),
            "val_samples": ds.val_idx.len(),
            "provenance_sha256": sha256_hex(ds.provenance.as_bytes()),
            "generation_seconds": wall.as_secs_f64(),
        }),
        &[],
    )?;
    println!(
        "{} dataset: {} samples ({} train / {} val), lambda2 in [{}, {}] -> {}",
        operator.label(),
        ds.n_samples(),
        ds.train_idx.len(),
        ds.val_idx.len(),
        ds.lambda2.first().unwrap_or(&f64::NAN),
        ds.lambda2.last().unwrap_or(&f64::NAN),
        dir.display()
    );
    Ok(())
}

pub fn train(config: &ExperimentConfig, operator: Operator) -> Result<()> {
    let dir = dataset_dir(config, operator);
    if !dir.join("manifest.txt").exists() {
        return Err(Error::Config(format!(
            "no {} dataset at {}; run `arzctl gen-dataset --operator {}` first",
            operator.label(),
            dir.display(),
            operator.label()
        )));
    }
    let ds = read_dataset(&dir)?;
    let expected = match operator {
        Operator::Kernel => config.kernel_dataset_config()?.provenance(),
        Operator::Law => config.law_dataset_config()?.provenance(),
    };
    if ds.provenance != expected {
        return Err(Error::Config(format!(
            "dataset at {} was generated with a different configuration;\n  found:    {}\n  expected: {}",
            dir.display(),
            ds.provenance,
            expected
        )));
    }

    let t0 = Instant::now();
    let (model, report) = train_model(&ds, &config.train_config())?;
    let wall = t0.elapsed();

    let model_rel = match operator {
        Operator::Kernel => &config.controller.kernel_model,
        Operator::Law => &config.controller.law_model,
    };
    let model_path = config.model_path(model_rel);
    save_model(&model, &model_path)?;

    let history_path = config.out_dir.join(format!("{}_loss_history.csv", operator.label()));
    let mut csv = String::from("epoch,train_loss,val_loss,best_val\n");
    for e in &report.history {
        csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.best_val));
    }
    std::fs::write(&history_path, csv)?;

    let model_hash = sha256_hex(&std::fs::read(&model_path)?);
    write_summary(
        config,
        "train",
        &[&model_path, &history_path],
        json!({
            "operator": operator.label(),
            "epochs_run": report.history.len(),
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val,
            "training_seconds": wall.as_secs_f64(),
            "model_sha256": model_hash,
        }),
        &[],
    )?;
    println!(
        "{} model: best val loss {:.3e} at epoch {} ({} epochs, {:.1?}) -> {}",
        operator.label(),
        report.best_val,
        report.best_epoch,
        report.history.len(),
        wall,
        model_path.display()
    );
    Ok(())
}

/// Build the configured controller; returns the controller plus the
/// cold-start duration (gain synthesis + first control evaluation).
fn build_controller(
    config: &ExperimentConfig,
    sim: &SimConfig,
    kind: &str,
    probe: &TrafficState,
) -> Result<(Box<dyn Controller>, Duration)> {
    let params = sim.params;
    let chars = characteristics(&sim.eq, &params)?;
    let grid = sim.cell_centers();
    let rs = arz_control::traffic_model::to_riemann(
        &grid,
        &probe.rho,
        &probe.v,
        &sim.eq,
        &chars,
        &params,
    )?;
    let ctx = ControlContext { riemann: &rs, v_inlet: probe.v[0], t: 0.0, dt: 0.0 };

    let t0 = Instant::now();
    let mut controller: Box<dyn Controller> = match kind {
        "backstepping" => {
            let kernels = kernel_solver::solve_kernels(&chars, params.length, config.kernels.n)?;
            Box::new(BacksteppingController::new(&kernels, &chars, &grid)?)
        }
        "no-kernels" => {
            let model = load_operator_model(config, Operator::Kernel)?;
            Box::new(NoKernelController::new(&model, chars.lambda2, &grid, params.length)?)
        }
        "no-law" => {
            let model = load_operator_model(config, Operator::Law)?;
            Box::new(NoLawController::new(&model, chars.lambda2)?)
        }
        "pi" => Box::new(PiController::new(
            PiGains::new(config.controller.kp, config.controller.ki),
            sim.eq.v_star,
        )),
        "zero" => Box::new(ZeroController),
        other => {
            return Err(Error::Config(format!(
                "controller.kind must be one of backstepping | no-kernels | no-law | pi | zero, got '{other}'"
            )))
        }
    };
    let _ = controller.control(&ctx);
    let cold = t0.elapsed();
    Ok((controller, cold))
}

pub fn simulate(config: &ExperimentConfig) -> Result<()> {
    let sim = config.sim_config()?;
    let ic = benchmark_ic(config, &sim)?;
    let (mut controller, cold) =
        build_controller(config, &sim, &config.controller.kind, &ic)?;
    let traj = run_simulation(&sim, &ic, controller.as_mut())?;

    let states_path = config.out_dir.join("states.csv");
    let control_path = config.out_dir.join("control.csv");
    let norms_path = config.out_dir.join("norms.csv");
    let plot_path = config.out_dir.join("plot_simulate.py");
    std::fs::write(&states_path, traj.states_csv(&sim))?;
    std::fs::write(&control_path, traj.control_csv())?;
    std::fs::write(&norms_path, traj.norms_csv())?;
    std::fs::write(&plot_path, plots::simulate_script())?;

    write_summary(
        config,
        "simulate",
        &[&states_path, &control_path, &norms_path, &plot_path],
        json!({
            "controller": config.controller.kind,
            "initial_norm": traj.initial_norm(),
            "final_norm": traj.final_norm(),
            "cold_start_seconds": cold.as_secs_f64(),
            "mean_control_seconds": traj.control_timing.mean_seconds(),
            "records": traj.norms.len(),
            "final_rho_veh_km": traj.snapshots.last().map(|s| s.rho.last().map(|r| r * 1000.0)),
        }),
        &traj.warnings,
    )?;
    println!(
        "{} run: norm {:.3} -> {:.3e}, {} records -> {}",
        config.controller.kind,
        traj.initial_norm(),
        traj.final_norm(),
        traj.norms.len(),
        config.out_dir.display()
    );
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

struct ComparisonRow {
    method: &'static str,
    cold_start: Duration,
    traj: Trajectory,
    error: f64,
}

pub fn compare(config: &ExperimentConfig) -> Result<()> {
    let sim = config.sim_config()?;
    let ic = benchmark_ic(config, &sim)?;

    // Cold starts are medians over repeated synthesis.
    let cold_for = |kind: &str| -> Result<Duration> {
        let mut reps = Vec::with_capacity(5);
        for _ in 0..5 {
            let (_, cold) = build_controller(config, &sim, kind, &ic)?;
            reps.push(cold);
        }
        reps.sort();
        Ok(reps[2])
    };

    let methods: [&'static str; 4] = ["backstepping", "no-kernels", "no-law", "pi"];
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for method in methods {
        let cold_start = cold_for(method)?;
        let (mut controller, _) = build_controller(config, &sim, method, &ic)?;
        let traj = run_simulation(&sim, &ic, controller.as_mut())?;
        rows.push(ComparisonRow { method, cold_start, traj, error: 0.0 });
    }
    let baseline = rows[0].traj.clone();
    for row in rows.iter_mut() {
        row.error = relative_l2_error(&row.traj, &baseline, &sim)?;
    }

    let table_path = config.out_dir.join("comparison.csv");
    let mut table = String::from("method,cold_start_s,avg_step_s,avg_l2_error,final_norm\n");
    for row in &rows {
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            row.method,
            row.cold_start.as_secs_f64(),
            row.traj.control_timing.mean_seconds(),
            row.error,
            row.traj.final_norm()
        ));
    }
    std::fs::write(&table_path, &table)?;

    let overlay = |select: &dyn Fn(&Trajectory, usize) -> f64| -> String {
        let mut csv = String::from("t,backstepping,no_kernels,no_law,pi\n");
        for i in 0..baseline.norms.len() {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                baseline.norms[i].t,
                select(&rows[0].traj, i),
                select(&rows[1].traj, i),
                select(&rows[2].traj, i),
                select(&rows[3].traj, i)
            ));
        }
        csv
    };
    let control_overlay_path = config.out_dir.join("control_overlay.csv");
    std::fs::write(&control_overlay_path, overlay(&|t, i| t.control[i].1))?;
    let norms_overlay_path = config.out_dir.join("norms_overlay.csv");
    std::fs::write(&norms_overlay_path, overlay(&|t, i| t.norms[i].combined()))?;
    let plot_path = config.out_dir.join("plot_compare.py");
    std::fs::write(&plot_path, plots::compare_script())?;

    let mut warnings = Vec::new();
    for row in &rows {
        warnings.extend(row.traj.warnings.iter().cloned());
    }
    write_summary(
        config,
        "compare",
        &[&table_path, &control_overlay_path, &norms_overlay_path, &plot_path],
        json!({
            "pi_gains": { "kp": config.controller.kp, "ki": config.controller.ki },
            "rows": rows.iter().map(|r| json!({
                "method": r.method,
                "cold_start_s": r.cold_start.as_secs_f64(),
                "avg_step_s": r.traj.control_timing.mean_seconds(),
                "avg_l2_error": r.error,
                "final_norm": r.traj.final_norm(),
            })).collect::<Vec<_>>(),
        }),
        &warnings,
    )?;

    println!("method         cold-start [s]  avg step [s]  avg L2 error  final norm");
    for row in &rows {
        println!(
            "{:<14} {:>14.6} {:>13.2e} {:>13.4} {:>11.3e}",
            row.method,
            row.cold_start.as_secs_f64(),
            row.traj.control_timing.mean_seconds(),
            row.error,
            row.traj.final_norm()
        );
    }
    Ok(())
}

pub fn measure_eps(config: &ExperimentConfig, operator: Operator) -> Result<()> {
    let model = load_operator_model(config, operator)?;
    let params = config.params()?;
    let (lo, hi) = model.trained_range;
    // Probe between training samples: midpoint-offset uniform grid.
    let n_test = 21usize;
    let lambdas: Vec<f64> =
        (0..n_test).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n_test as f64).collect();

    let t0 = Instant::now();
    let report = match operator {
        Operator::Kernel => {
            let grid = KernelGrid::new(params.length, 51)?;
            let predict = |l: f64| model.eval_kernels_on_grid(l, &grid);
            let oracle = |l: f64| -> Result<(Vec<f64>, Vec<f64>)> {
                let rho = rho_star_for_lambda2(l, &params)?;
                let eq = equilibrium(rho, &params)?;
                let chars = characteristics(&eq, &params)?;
                let pair = kernel_solver::solve_kernels(&chars, params.length, 51)?;
                Ok((pair.kw.clone(), pair.kv.clone()))
            };
            measure_eps_kernels(&predict, &oracle, &lambdas, &grid)?
        }
        Operator::Law => {
            let law_config = config.law_dataset_config()?;
            let oracle = |l: f64| -> Result<Vec<f64>> {
                let single =
                    gen_law_dataset(&arz_control::neural_op::LawDatasetConfig {
                        lambda2_min: l,
                        lambda2_max: l + 1e-9,
                        n_samples: 2,
                        ..law_config.clone()
                    })?;
                Ok(single.targets[0].clone())
            };
            // Shared record grid from one oracle run.
            let probe = gen_law_dataset(&arz_control::neural_op::LawDatasetConfig {
                lambda2_min: lambdas[0],
                lambda2_max: lambdas[0] + 1e-9,
                n_samples: 2,
                ..law_config.clone()
            })?;
            let times = probe.trunk_points.clone();
            let predict = |l: f64| -> Result<Vec<f64>> {
                Ok(model.eval(l, &times)?.per_head[0].clone())
            };
            measure_eps_law(&predict, &oracle, &lambdas, &times)?
        }
    };
    let wall = t0.elapsed();

    let report_path = config.out_dir.join(format!("{}_eps_report.csv", operator.label()));
    std::fs::write(
        &report_path,
        format!("eps_sup,eps_l2\n{},{}\n", report.eps_sup, report.eps_l2),
    )?;
    write_summary(
        config,
        "measure-eps",
        &[&report_path],
        json!({
            "operator": operator.label(),
            "eps_sup": report.eps_sup,
            "eps_l2": report.eps_l2,
            "test_lambda2": lambdas,
            "measurement_seconds": wall.as_secs_f64(),
        }),
        &[],
    )?;
    println!(
        "{} operator accuracy over {} held-out lambda2 values: eps_sup {:.4e}, eps_l2 {:.4e}",
        operator.label(),
        lambdas.len(),
        report.eps_sup,
        report.eps_l2
    );
    Ok(())
}
