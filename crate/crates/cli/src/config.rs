//! Experiment configuration: one TOML file drives every subcommand; CLI
//! flags (`--seed`, `--out`) override file values.

use serde::{Deserialize, Serialize};

use crlab_core::agent::TrainerConfig;
use crlab_core::assist::AssistConfig;
use crlab_core::tmaze::TmazeConfig;

fn default_theta_grid() -> Vec<f64> {
    (0..11).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub theta_grid: Vec<f64>,
    pub maze: TmazeConfig,
    pub trainer: TrainerConfig,
    pub gallery: GalleryConfig,
    pub inference: InferenceConfig,
    pub tau_sweep: TauSweepConfig,
    pub assist: AssistConfig,
    pub assist_eval_episodes: usize,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            theta_grid: default_theta_grid(),
            maze: TmazeConfig::default(),
            trainer: TrainerConfig::default(),
            gallery: GalleryConfig::default(),
            inference: InferenceConfig::default(),
            tau_sweep: TauSweepConfig::default(),
            assist: AssistConfig::default(),
            assist_eval_episodes: 200,
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GalleryConfig {
    pub greedy_episodes: usize,
    pub sampled_episodes: usize,
    pub tau: f64,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        Self {
            greedy_episodes: 500,
            sampled_episodes: 500,
            tau: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Total observed user actions per run (across episode boundaries).
    pub steps: usize,
    pub n_inner: usize,
    pub tau: f64,
    /// Inner systematic resampling (false = strict no-resampling mode).
    pub resample: bool,
    pub n_seeds: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            n_inner: 200,
            tau: 3.0,
            resample: true,
            n_seeds: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TauSweepConfig {
    pub taus: Vec<f64>,
    /// Exponential schedule tau_0 -> tau_end over the run's steps.
    pub adaptive_tau0: f64,
    pub adaptive_tau_end: f64,
}

impl Default for TauSweepConfig {
    fn default() -> Self {
        Self {
            taus: vec![1.0, 3.0, 5.0, 10.0],
            adaptive_tau0: 5.0,
            adaptive_tau_end: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n_inner: usize,
    pub n_seeds: u64,
    pub horizon: usize,
    pub tv_threshold: f64,
    pub budget: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_inner: 2000,
            n_seeds: 20,
            horizon: 4,
            tv_threshold: 0.05,
            budget: 1_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&std::path::Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                Ok(toml::from_str(&text)?)
            }
        }
    }

    /// FNV-1a over the canonical JSON encoding; stamped into every output
    /// sidecar so reruns are attributable.
    pub fn digest(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut h = 0xcbf29ce484222325u64;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Exponential temperature schedule: tau(0) = tau0, tau(total) = tau_end,
/// strictly monotone in between.
pub fn adaptive_tau(tau0: f64, tau_end: f64, t: usize, total: usize) -> f64 {
    tau0 * (tau_end / tau0).powf(t as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.digest(), back.digest());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: ExperimentConfig = toml::from_str("seed = 9\n[inference]\nsteps = 20\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.inference.steps, 20);
        assert_eq!(cfg.inference.n_inner, 200);
        assert_eq!(cfg.theta_grid.len(), 11);
    }

    #[test]
    fn adaptive_schedule_endpoints_and_monotonicity() {
        assert!((adaptive_tau(5.0, 1.0, 0, 100) - 5.0).abs() < 1e-12);
        assert!((adaptive_tau(5.0, 1.0, 100, 100) - 1.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for t in 0..=100 {
            let v = adaptive_tau(5.0, 1.0, t, 100);
            assert!(v < prev);
            prev = v;
        }
    }
}
