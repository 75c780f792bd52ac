//! Temperature sensitivity: repeat the inference experiment across the
//! fixed temperature grid plus the adaptive exponential schedule.

use serde::Serialize;

use crate::config::{adaptive_tau, ExperimentConfig};
use crate::output::OutDir;

use super::infer::{convergence_rows, run_inference_grid, trace_rows};
use super::{build_maze, load_bank};

#[derive(Serialize)]
struct SweepRow {
    schedule: String,
    final_pm_error: f64,
    final_pm_stderr: f64,
    final_map_error: f64,
    final_map_stderr: f64,
    pm_error_at_t1: f64,
    pm_reduction: f64,
}

pub fn run(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<()> {
    let maze = build_maze(cfg)?;
    let bank = load_bank(cfg, out)?;
    let steps = cfg.inference.steps;
    let mut schedules: Vec<(String, Box<dyn Fn(usize) -> f64 + Sync>)> = cfg
        .tau_sweep
        .taus
        .iter()
        .map(|tau| {
            let tau = *tau;
            (
                format!("tau_{tau}"),
                Box::new(move |_| tau) as Box<dyn Fn(usize) -> f64 + Sync>,
            )
        })
        .collect();
    let (tau0, tau_end) = (cfg.tau_sweep.adaptive_tau0, cfg.tau_sweep.adaptive_tau_end);
    schedules.push((
        "adaptive".to_string(),
        Box::new(move |t| adaptive_tau(tau0, tau_end, t, steps)),
    ));

    let mut summary = Vec::new();
    for (label, tau_of) in &schedules {
        let runs = run_inference_grid(&maze, &bank, cfg, tau_of.as_ref())?;
        let (header, rows) = trace_rows(&bank.grid, &runs);
        out.write_csv_records(&format!("tau_sweep_trace_{label}.csv"), &header, &rows)?;
        let agg = convergence_rows(&runs, steps);
        out.write_csv(&format!("tau_sweep_convergence_{label}.csv"), &agg)?;
        let first = agg.first().expect("nonempty");
        let last = agg.last().expect("nonempty");
        summary.push(SweepRow {
            schedule: label.clone(),
            final_pm_error: last.pm_error_mean,
            final_pm_stderr: last.pm_error_stderr,
            final_map_error: last.map_error_mean,
            final_map_stderr: last.map_error_stderr,
            pm_error_at_t1: first.pm_error_mean,
            pm_reduction: 1.0 - last.pm_error_mean / first.pm_error_mean,
        });
        println!(
            "{label}: final pm error {:.4}, reduction {:.1}%",
            last.pm_error_mean,
            100.0 * (1.0 - last.pm_error_mean / first.pm_error_mean)
        );
    }
    out.write_csv("tau_sweep_summary.csv", &summary)?;
    Ok(())
}
