pub mod assist;
pub mod gallery;
pub mod infer;
pub mod oracle_check;
pub mod tau_sweep;
pub mod train_bank;

use anyhow::Context;

use crlab_core::agent::PolicyBank;
use crlab_core::tmaze::{build_tmaze, Tmaze};

use crate::config::ExperimentConfig;
use crate::output::OutDir;

pub const BANK_FILE: &str = "bank.json";
pub const ASSIST_POLICY_FILE: &str = "assist_policy.json";

pub fn build_maze(cfg: &ExperimentConfig) -> anyhow::Result<Tmaze> {
    Ok(build_tmaze(&cfg.maze)?)
}

pub fn load_bank(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<PolicyBank> {
    let path = out.path(BANK_FILE);
    let bank = PolicyBank::load(&path)
        .with_context(|| format!("no usable policy bank at {} (run train-bank first)", path.display()))?;
    for theta in &cfg.theta_grid {
        bank.policy_for(*theta)?;
    }
    Ok(bank)
}
