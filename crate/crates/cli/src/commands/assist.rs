//! Assistance training and evaluation, including the do-nothing control
//! arm and the intervention-timing dump.

use serde::Serialize;

use crlab_core::assist::{
    evaluate_assistance, run_assisted_episode, train_assist_policy, AssistPolicy, AssistReport,
    DoNothingChooser,
};
use crlab_core::rng::{stream, stream_id};

use crate::config::ExperimentConfig;
use crate::output::OutDir;

use super::{build_maze, load_bank, ASSIST_POLICY_FILE};

const TIMING_EPISODES: usize = 50;
const TIMING_TAG: u64 = 0x61746d;

pub fn train(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<()> {
    let maze = build_maze(cfg)?;
    let bank = load_bank(cfg, out)?;
    let (policy, curve) = train_assist_policy(&maze, &bank, &cfg.assist, cfg.seed)?;
    policy.save(&out.path(ASSIST_POLICY_FILE))?;
    out.write_csv("assist_training_curve.csv", &curve)?;
    let last = curve.last().expect("at least one epoch");
    println!(
        "assist policy trained: final return {:.3}, intervention rate {:.3}",
        last.mean_ai_return, last.intervention_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportRow {
    policy: String,
    theta: f64,
    episodes: usize,
    do_nothing_frac: f64,
    action_hint_frac: f64,
    memory_hint_frac: f64,
    interventions_per_step: f64,
    mean_ai_reward: f64,
    success_rate: f64,
}

impl ReportRow {
    fn new(policy: &str, r: AssistReport) -> Self {
        Self {
            policy: policy.to_string(),
            theta: r.theta,
            episodes: r.episodes,
            do_nothing_frac: r.do_nothing_frac,
            action_hint_frac: r.action_hint_frac,
            memory_hint_frac: r.memory_hint_frac,
            interventions_per_step: r.interventions_per_step,
            mean_ai_reward: r.mean_ai_reward,
            success_rate: r.success_rate,
        }
    }
}

#[derive(Serialize)]
struct TimingRow {
    theta: f64,
    episode: usize,
    step: usize,
    kind: String,
    user_entropy: f64,
}

pub fn eval(cfg: &ExperimentConfig, out: &OutDir) -> anyhow::Result<()> {
    let maze = build_maze(cfg)?;
    let bank = load_bank(cfg, out)?;
    let policy = AssistPolicy::load(&out.path(ASSIST_POLICY_FILE))?;
    let mut rows = Vec::new();
    for report in evaluate_assistance(
        &maze,
        &bank,
        &policy,
        &cfg.theta_grid,
        cfg.assist_eval_episodes,
        &cfg.assist,
        cfg.seed,
    ) {
        rows.push(ReportRow::new("trained", report));
    }
    for report in evaluate_assistance(
        &maze,
        &bank,
        &DoNothingChooser,
        &cfg.theta_grid,
        cfg.assist_eval_episodes,
        &cfg.assist,
        cfg.seed,
    ) {
        rows.push(ReportRow::new("baseline", report));
    }
    out.write_csv("assist_eval.csv", &rows)?;

    // Intervention timing dump: a smaller batch of logged episodes.
    let mut timings = Vec::new();
    for theta in &cfg.theta_grid {
        let theta_tag = (theta * 1000.0).round() as u64;
        for e in 0..TIMING_EPISODES {
            let mut rng = stream(cfg.seed, &[TIMING_TAG, theta_tag, e as u64]);
            let npf_seed = stream_id(cfg.seed, &[TIMING_TAG + 1, theta_tag, e as u64]);
            let (episode, _) =
                run_assisted_episode(&maze, &bank, *theta, &cfg.assist, &policy, npf_seed, &mut rng);
            for s in &episode.steps {
                let kind = match s.assist {
                    crlab_core::assist::AssistAction::DoNothing => continue,
                    crlab_core::assist::AssistAction::ActionHint(_) => "action_hint",
                    crlab_core::assist::AssistAction::MemoryHint { .. } => "memory_hint",
                };
                timings.push(TimingRow {
                    theta: *theta,
                    episode: e,
                    step: s.t,
                    kind: kind.into(),
                    user_entropy: s.user_entropy,
                });
            }
        }
    }
    out.write_jsonl("assist_timing.jsonl", &timings)?;
    println!("assist evaluation written for {} theta values", cfg.theta_grid.len());
    Ok(())
}
