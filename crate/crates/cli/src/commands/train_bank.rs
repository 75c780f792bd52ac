//! Train one policy per grid theta; reruns with an unchanged trainer
//! config and seed reuse the stored bank.

use serde::Serialize;

use crlab_core::agent::{train_bank, PolicyBank};

use crate::config::ExperimentConfig;
use crate::output::OutDir;

use super::{build_maze, BANK_FILE};

#[derive(Serialize)]
struct CurveRow {
    theta: f64,
    iteration: usize,
    mean_return: f64,
    success_rate: f64,
    entropy: f64,
}

pub fn run(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<()> {
    let maze = build_maze(cfg)?;
    let bank_path = out.path(BANK_FILE);
    let trainer_digest = cfg.trainer.digest();
    if let Ok(existing) = PolicyBank::load(&bank_path) {
        let fresh = existing.grid == cfg.theta_grid
            && existing
                .policies
                .iter()
                .all(|p| p.seed == cfg.seed && p.config_digest == trainer_digest);
        if fresh {
            println!("bank up to date at {} (digest match), skipping", bank_path.display());
            return Ok(());
        }
    }
    let (bank, curves) = train_bank(&maze, &cfg.theta_grid, &cfg.trainer, cfg.seed)?;
    bank.save(&bank_path)?;
    let rows: Vec<CurveRow> = cfg
        .theta_grid
        .iter()
        .zip(&curves)
        .flat_map(|(theta, curve)| {
            curve.iter().map(|p| CurveRow {
                theta: *theta,
                iteration: p.iteration,
                mean_return: p.mean_return,
                success_rate: p.success_rate,
                entropy: p.entropy,
            })
        })
        .collect();
    out.write_csv("training_curves.csv", &rows)?;
    println!("trained {} policies -> {}", bank.grid.len(), bank_path.display());
    Ok(())
}
