//! Online inference: simulate a bounded-memory user across episodes and
//! run the nested filter on the passively observed action stream,
//! recording posterior error per step.

use rand::Rng;
use serde::Serialize;

use crlab_core::agent::{BeliefPolicy, PolicyBank};
use crlab_core::memory::{biased_belief, InternalMemory, MemoryBound};
use crlab_core::npf::{NpfConfig, NpfFilter, PosteriorSummary};
use crlab_core::pomdp::softmax_policy;
use crlab_core::rng::{stream, stream_id};
use crlab_core::tmaze::Tmaze;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::{fmt_f64, mean_and_stderr, OutDir};

use super::{build_maze, load_bank};

const INFER_TAG: u64 = 0x696e66;

/// Per-update record of one inference run.
#[derive(Debug, Clone, Serialize)]
pub struct InferStep {
    pub t: usize,
    pub episode: u64,
    pub tau: f64,
    pub pm: f64,
    pub map: f64,
    pub pm_error: f64,
    pub map_error: f64,
    pub outer_ess: f64,
    pub mean_inner_ess: f64,
    pub weights: Vec<f64>,
}

/// Simulate one user and filter their stream for `steps` actions,
/// resetting the episode state (but not the theta posterior) whenever the
/// task terminates. The user always acts at `user_tau`; `tau_of(t)` gives
/// the temperature the filter's likelihood model assumes at global step t,
/// so sweeping it probes sensitivity to a misspecified sharpness.
#[allow(clippy::too_many_arguments)]
pub fn run_single_inference(
    maze: &Tmaze,
    bank: &PolicyBank,
    theta_true: f64,
    steps: usize,
    n_inner: usize,
    resample: bool,
    seed: u64,
    run_tag: u64,
    user_tau: f64,
    tau_of: &dyn Fn(usize) -> f64,
) -> anyhow::Result<Vec<InferStep>> {
    let decay = maze.decay_model();
    let theta_tag = (theta_true * 1000.0).round() as u64;
    let filter_seed = stream_id(seed, &[INFER_TAG, theta_tag, run_tag, 0]);
    let mut rng = stream(seed, &[INFER_TAG, theta_tag, run_tag, 1]);
    let user = bank.policy_for(theta_true)?;
    let bound = MemoryBound::new(theta_true);
    let init = maze.initial_belief();
    let mut filter = NpfFilter::new(
        &maze.pomdp,
        &decay,
        init.clone(),
        bank,
        &bank.grid,
        NpfConfig {
            n_inner,
            tau: tau_of(0),
            resample,
            parallel: true,
            seed: filter_seed,
        },
    );
    let mut records = Vec::with_capacity(steps);
    let mut t_global = 0usize;
    'run: loop {
        // Fresh episode.
        let target = rng.random_range(0..maze.config.n_objects);
        let mut st = maze.start_state(target);
        let mut mem = InternalMemory::empty();
        let obs0 = maze.observation_of(st);
        mem = decay.step(&mem, obs0, None, bound, &mut rng);
        let mut prev_act: Option<usize> = None;
        let mut t_ep = 0usize;
        loop {
            let tau = tau_of(t_global);
            let belief = biased_belief(&maze.pomdp, &mem, &init)
                .expect("decayed true history is model-consistent");
            let dist = softmax_policy(&user.q_values(&belief, t_ep), user_tau)?;
            let a = dist.sample(&mut rng);
            filter.cfg.tau = tau;
            let obs_t = maze.observation_of(st);
            let summary = filter.npf_update(obs_t, prev_act, a)?;
            prev_act = Some(a);
            t_ep += 1;
            t_global += 1;
            let (next, _reward, done) = maze.step(st, a, t_ep);
            records.push(to_record(t_global, filter.ps.episode, tau, theta_true, &summary));
            if t_global >= steps {
                break 'run;
            }
            if done {
                filter.episode_reset();
                break;
            }
            let next_obs = maze.observation_of(next);
            mem = decay.step(&mem, next_obs, Some(a), bound, &mut rng);
            st = next;
        }
    }
    Ok(records)
}

fn to_record(
    t: usize,
    episode: u64,
    tau: f64,
    theta_true: f64,
    summary: &PosteriorSummary,
) -> InferStep {
    InferStep {
        t,
        episode,
        tau,
        pm: summary.mean,
        map: summary.map,
        pm_error: (summary.mean - theta_true).abs(),
        map_error: (summary.map - theta_true).abs(),
        outer_ess: summary.outer_ess,
        mean_inner_ess: summary.mean_inner_ess,
        weights: summary.weights.clone(),
    }
}

/// All (theta_true, seed-index) runs for one temperature schedule.
pub fn run_inference_grid(
    maze: &Tmaze,
    bank: &PolicyBank,
    cfg: &ExperimentConfig,
    tau_of: &(dyn Fn(usize) -> f64 + Sync),
) -> anyhow::Result<Vec<(f64, u64, Vec<InferStep>)>> {
    let mut jobs = Vec::new();
    for theta in &cfg.theta_grid {
        for run in 0..cfg.inference.n_seeds {
            jobs.push((*theta, run));
        }
    }
    let run_one = |(theta, run): &(f64, u64)| -> anyhow::Result<(f64, u64, Vec<InferStep>)> {
        let steps = run_single_inference(
            maze,
            bank,
            *theta,
            cfg.inference.steps,
            cfg.inference.n_inner,
            cfg.inference.resample,
            cfg.seed,
            *run,
            cfg.inference.tau,
            tau_of,
        )?;
        Ok((*theta, *run, steps))
    };
    #[cfg(feature = "parallel")]
    let results: anyhow::Result<Vec<_>> = jobs.par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    let results: anyhow::Result<Vec<_>> = jobs.iter().map(run_one).collect();
    results
}

/// Flatten per-run traces into the trace CSV rows (dynamic weight columns).
pub fn trace_rows(
    grid: &[f64],
    runs: &[(f64, u64, Vec<InferStep>)],
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![
        "theta_true".to_string(),
        "run".to_string(),
        "t".to_string(),
        "episode".to_string(),
        "tau".to_string(),
        "pm".to_string(),
        "map".to_string(),
        "pm_error".to_string(),
        "map_error".to_string(),
        "outer_ess".to_string(),
        "mean_inner_ess".to_string(),
    ];
    header.extend(grid.iter().map(|g| format!("w_{g}")));
    let mut rows = Vec::new();
    for (theta, run, steps) in runs {
        for s in steps {
            let mut row = vec![
                fmt_f64(*theta),
                run.to_string(),
                s.t.to_string(),
                s.episode.to_string(),
                fmt_f64(s.tau),
                fmt_f64(s.pm),
                fmt_f64(s.map),
                fmt_f64(s.pm_error),
                fmt_f64(s.map_error),
                fmt_f64(s.outer_ess),
                fmt_f64(s.mean_inner_ess),
            ];
            row.extend(s.weights.iter().map(|w| fmt_f64(*w)));
            rows.push(row);
        }
    }
    (header, rows)
}

#[derive(Serialize)]
pub struct ConvergenceRow {
    pub t: usize,
    pub pm_error_mean: f64,
    pub pm_error_stderr: f64,
    pub map_error_mean: f64,
    pub map_error_stderr: f64,
}

/// Aggregate mean +- standard error per step across all runs.
pub fn convergence_rows(runs: &[(f64, u64, Vec<InferStep>)], steps: usize) -> Vec<ConvergenceRow> {
    (1..=steps)
        .map(|t| {
            let pm: Vec<f64> = runs.iter().map(|(_, _, s)| s[t - 1].pm_error).collect();
            let map: Vec<f64> = runs.iter().map(|(_, _, s)| s[t - 1].map_error).collect();
            let (pm_mean, pm_se) = mean_and_stderr(&pm);
            let (map_mean, map_se) = mean_and_stderr(&map);
            ConvergenceRow {
                t,
                pm_error_mean: pm_mean,
                pm_error_stderr: pm_se,
                map_error_mean: map_mean,
                map_error_stderr: map_se,
            }
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<()> {
    let maze = build_maze(cfg)?;
    let bank = load_bank(cfg, out)?;
    let fixed_tau = cfg.inference.tau;
    let runs = run_inference_grid(&maze, &bank, cfg, &move |_| fixed_tau)?;
    let (header, rows) = trace_rows(&bank.grid, &runs);
    out.write_csv_records("inference_trace.csv", &header, &rows)?;
    let agg = convergence_rows(&runs, cfg.inference.steps);
    out.write_csv("inference_convergence.csv", &agg)?;
    let last = agg.last().expect("nonempty run");
    println!(
        "inference done: final pm error {:.4} +- {:.4} over {} runs",
        last.pm_error_mean,
        last.pm_error_stderr,
        runs.len()
    );
    Ok(())
}
