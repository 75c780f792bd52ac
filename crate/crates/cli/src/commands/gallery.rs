//! Behavior galleries: greedy and temperature-sampled episodes per theta,
//! with per-cell visit counts and a summary table.

use serde::Serialize;

use crlab_core::agent::{run_cr_episode, ActionRule, Trajectory};
use crlab_core::memory::MemoryBound;
use crlab_core::rng::stream;
use crlab_core::tmaze::Tmaze;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::OutDir;

use super::{build_maze, load_bank};

#[derive(Serialize)]
struct SummaryRow {
    theta: f64,
    rule: String,
    episodes: usize,
    success_rate: f64,
    mean_length: f64,
    /// Fraction of episodes that enter an object-visible cell at all.
    object_visit_episode_rate: f64,
    /// Mean count of steps on object-visible cells per episode.
    mean_object_cell_visits: f64,
}

#[derive(Serialize)]
struct VisitRow {
    theta: f64,
    rule: String,
    row: usize,
    col: usize,
    count: usize,
}

const GALLERY_TAG: u64 = 0x67616c;
const TRAJECTORIES_PER_RULE: usize = 20;

pub fn run_rule(
    maze: &Tmaze,
    bank: &crlab_core::agent::PolicyBank,
    theta: f64,
    rule: ActionRule,
    episodes: usize,
    seed: u64,
) -> Vec<Trajectory> {
    let policy = bank.policy_for(theta).expect("grid theta");
    let theta_tag = (theta * 1000.0).round() as u64;
    let rule_tag = match rule {
        ActionRule::Greedy => 0,
        ActionRule::Softmax(_) => 1,
    };
    let run_one = |e: &usize| {
        let mut rng = stream(seed, &[GALLERY_TAG, theta_tag, rule_tag, *e as u64]);
        let mut tr = run_cr_episode(maze, policy, MemoryBound::new(theta), rule, &mut rng);
        tr.theta_policy = theta;
        tr
    };
    let idx: Vec<usize> = (0..episodes).collect();
    #[cfg(feature = "parallel")]
    return idx.par_iter().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    idx.iter().map(run_one).collect()
}

pub fn run(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<()> {
    let maze = build_maze(cfg)?;
    let bank = load_bank(cfg, out)?;
    let mut summary = Vec::new();
    let mut visits = Vec::new();
    let mut trajectories: Vec<serde_json::Value> = Vec::new();
    for theta in &cfg.theta_grid {
        for (rule, label, episodes) in [
            (ActionRule::Greedy, "greedy".to_string(), cfg.gallery.greedy_episodes),
            (
                ActionRule::Softmax(cfg.gallery.tau),
                format!("softmax:{}", cfg.gallery.tau),
                cfg.gallery.sampled_episodes,
            ),
        ] {
            let runs = run_rule(&maze, &bank, *theta, rule, episodes, cfg.seed);
            let successes = runs.iter().filter(|t| t.success).count();
            let total_len: usize = runs.iter().map(|t| t.len()).sum();
            let visit_counts: Vec<usize> = runs.iter().map(|t| t.object_cell_visits(&maze)).collect();
            let visited_any = visit_counts.iter().filter(|c| **c > 0).count();
            summary.push(SummaryRow {
                theta: *theta,
                rule: label.clone(),
                episodes,
                success_rate: successes as f64 / episodes as f64,
                mean_length: total_len as f64 / episodes as f64,
                object_visit_episode_rate: visited_any as f64 / episodes as f64,
                mean_object_cell_visits: visit_counts.iter().sum::<usize>() as f64 / episodes as f64,
            });
            let mut counts = std::collections::BTreeMap::new();
            for tr in &runs {
                for step in &tr.steps {
                    let pos = maze.state_of(step.state).position;
                    *counts.entry(pos).or_insert(0usize) += 1;
                }
            }
            visits.extend(counts.into_iter().map(|((row, col), count)| VisitRow {
                theta: *theta,
                rule: label.clone(),
                row,
                col,
                count,
            }));
            for tr in runs.iter().take(TRAJECTORIES_PER_RULE) {
                trajectories.push(serde_json::to_value(tr)?);
            }
        }
    }
    out.write_csv("gallery_summary.csv", &summary)?;
    out.write_csv("gallery_visits.csv", &visits)?;
    out.write_jsonl("gallery_trajectories.jsonl", &trajectories)?;
    println!("gallery written for {} theta values", cfg.theta_grid.len());
    Ok(())
}
