//! The assistant's decision problem: costly interventions (action hints
//! accepted only by uncertain users, memory hints the user fully trusts),
//! belief tracking over the user's memory and bound via the nested filter,
//! and the two-step adaptive policy — a learned intervention-type policy
//! over belief features plus rule-based content selection.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::agent::{BeliefPolicy, PolicyBank, TAU_REF};
use crate::memory::{biased_belief, InternalMemory, MemoryBound, MemoryError};
use crate::nn::Mlp;
use crate::npf::{NestedParticleSet, NpfConfig, NpfFilter, PolicyProvider};
use crate::pomdp::{policy_entropy, softmax_policy, ActionDistribution, Belief};
use crate::ppo::{PpoConfig, PpoLearner, TrainError, Transition};
use crate::rng::stream;
use crate::tmaze::{Tmaze, TmazeState};

pub const ASSIST_SCHEMA_VERSION: u32 = 1;
pub const N_ASSIST_TYPES: usize = 3;
pub const KIND_DO_NOTHING: usize = 0;
pub const KIND_ACTION_HINT: usize = 1;
pub const KIND_MEMORY_HINT: usize = 2;

#[derive(Debug, Error)]
pub enum AssistError {
    #[error("memory hint index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("assist policy schema version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("assist policy i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("assist policy encoding: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AssistAction {
    DoNothing,
    ActionHint(usize),
    /// Restore memory entry `k` to observation `obs`.
    MemoryHint { k: usize, obs: usize },
}

impl AssistAction {
    pub fn kind(&self) -> usize {
        match self {
            AssistAction::DoNothing => KIND_DO_NOTHING,
            AssistAction::ActionHint(_) => KIND_ACTION_HINT,
            AssistAction::MemoryHint { .. } => KIND_MEMORY_HINT,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AssistCosts {
    pub action_hint: f64,
    pub memory_hint: f64,
}

impl Default for AssistCosts {
    fn default() -> Self {
        Self {
            action_hint: 0.05,
            memory_hint: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AssistConfig {
    /// Action-hint acceptance threshold on the user's policy entropy (nats).
    pub entropy_threshold: f64,
    pub costs: AssistCosts,
    pub tau: f64,
    /// Inner particle count of the assistant's own filter.
    pub n_inner: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub ppo: PpoConfig,
}

impl Default for AssistConfig {
    fn default() -> Self {
        Self {
            entropy_threshold: 1.0,
            costs: AssistCosts::default(),
            tau: TAU_REF,
            n_inner: 30,
            epochs: 80,
            episodes_per_epoch: 33,
            ppo: PpoConfig::default(),
        }
    }
}

/// r^AI = task reward minus intervention cost; silence is free.
pub fn ai_reward(task_reward: f64, assist: &AssistAction, costs: &AssistCosts) -> f64 {
    task_reward
        - match assist {
            AssistAction::DoNothing => 0.0,
            AssistAction::ActionHint(_) => costs.action_hint,
            AssistAction::MemoryHint { .. } => costs.memory_hint,
        }
}

/// The user's reaction to a pending assist action: an action hint is
/// adopted iff the user's own policy entropy reaches the threshold;
/// everything else leaves the choice to the user's policy.
pub fn assisted_user_action<R: Rng>(
    dist: &ActionDistribution,
    assist: &AssistAction,
    entropy_threshold: f64,
    rng: &mut R,
) -> usize {
    match assist {
        AssistAction::ActionHint(a) if policy_entropy(dist) >= entropy_threshold => *a,
        _ => dist.sample(rng),
    }
}

/// Memory refresh; the decay for the step is applied first, the refresh
/// overwrites afterwards.
pub fn apply_memory_hint(mem: &mut InternalMemory, k: usize, obs: usize) -> Result<(), AssistError> {
    mem.set_obs(k, obs).map_err(|_| AssistError::IndexOutOfRange(k))
}

/// Content selection for a chosen intervention type. The action hint is
/// the optimal fully-observed move at the true state; the memory hint is
/// the most recent critical observation; an impossible memory hint (no
/// critical observation yet) falls back to silence.
pub fn select_assist_content(
    kind: usize,
    maze: &Tmaze,
    state: TmazeState,
    critical_set: &[(usize, usize)],
) -> AssistAction {
    match kind {
        KIND_ACTION_HINT => AssistAction::ActionHint(maze.optimal_action(state)),
        KIND_MEMORY_HINT => match critical_set.last() {
            Some((k, obs)) => AssistAction::MemoryHint { k: *k, obs: *obs },
            None => AssistAction::DoNothing,
        },
        _ => AssistAction::DoNothing,
    }
}

/// Fixed-length belief summary the type-policy consumes: the outer theta
/// weights, the posterior probability that the latest critical sighting is
/// still intact in the user's memory, the episode step fraction, the
/// expected entropy of the user's next action distribution, and a flag
/// for whether any critical observation exists this episode.
pub const N_BASE_FEATURES: usize = 4;

pub fn ai_features<P: PolicyProvider + ?Sized>(
    ps: &NestedParticleSet,
    filter_model: &crate::pomdp::DiscretePomdp,
    initial_belief: &Belief,
    provider: &P,
    tau: f64,
    critical_set: &[(usize, usize)],
    t: usize,
    max_steps: usize,
) -> Vec<f64> {
    let mut feats = Vec::with_capacity(ps.n_outer() + N_BASE_FEATURES);
    feats.extend(ps.outer.iter().map(|o| o.weight));

    // Intactness of the newest critical sighting: entry k across particles.
    let intact = match critical_set.last() {
        None => 0.0,
        Some((k, obs)) => {
            let mut p = 0.0;
            for outer in &ps.outer {
                for inner in &outer.inner {
                    if inner
                        .memory
                        .entries()
                        .get(*k)
                        .is_none_or(|e| e.obs == *obs)
                    {
                        // Entries the filter has not yet appended count as
                        // intact (the sighting just happened).
                        p += outer.weight * inner.weight;
                    }
                }
            }
            p
        }
    };
    feats.push(intact);
    feats.push(t as f64 / max_steps as f64);

    // Expected user action entropy under the assistant's belief; empty
    // memories (episode start) fall back to the initial belief.
    let mut expected_entropy = 0.0;
    for outer in &ps.outer {
        for inner in &outer.inner {
            let belief = if inner.memory.is_empty() {
                Ok(initial_belief.clone())
            } else {
                biased_belief(filter_model, &inner.memory, initial_belief)
            };
            let h = match belief {
                Ok(b) => {
                    let t_act = inner.memory.len().max(1) - 1;
                    entropy_probs(&provider.action_probs(outer.theta, &b, t_act, tau))
                }
                Err(MemoryError::CorruptedMemoryContradiction) => 0.0,
                Err(e) => panic!("biased belief failed: {e}"),
            };
            expected_entropy += outer.weight * inner.weight * h;
        }
    }
    feats.push(expected_entropy);
    feats.push(if critical_set.is_empty() { 0.0 } else { 1.0 });
    feats
}

fn entropy_probs(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Learned intervention-type policy (features -> {silence, action hint,
/// memory hint}).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssistPolicy {
    pub version: u32,
    pub n_features: usize,
    pub seed: u64,
    pub net_digest: u64,
    net: Mlp,
}

impl AssistPolicy {
    fn from_net(net: Mlp, seed: u64) -> Self {
        Self {
            version: ASSIST_SCHEMA_VERSION,
            n_features: net.input_dim(),
            seed,
            net_digest: net.digest(),
            net,
        }
    }

    pub fn type_probs(&self, feats: &[f64]) -> Vec<f64> {
        crate::ppo::softmax(&self.net.forward(feats))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), AssistError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AssistError> {
        let policy: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if policy.version != ASSIST_SCHEMA_VERSION {
            return Err(AssistError::VersionMismatch {
                found: policy.version,
                expected: ASSIST_SCHEMA_VERSION,
            });
        }
        Ok(policy)
    }
}

/// One step of an assisted episode, as logged for training and reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssistStep {
    pub t: usize,
    pub assist: AssistAction,
    pub user_action: usize,
    pub user_entropy: f64,
    pub task_reward: f64,
    pub ai_reward: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssistEpisode {
    pub theta_true: f64,
    pub success: bool,
    pub steps: Vec<AssistStep>,
}

impl AssistEpisode {
    pub fn total_ai_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.ai_reward).sum()
    }

    pub fn intervention_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.assist != AssistAction::DoNothing)
            .count()
    }
}

/// Type chooser: maps features to a type index (plus log-prob and value
/// when a learner is behind it).
pub trait TypeChooser {
    fn choose<R: Rng>(&self, feats: &[f64], rng: &mut R) -> (usize, f64, f64);
}

/// The constant-silence baseline (the unassisted control arm).
pub struct DoNothingChooser;
impl TypeChooser for DoNothingChooser {
    fn choose<R: Rng>(&self, _feats: &[f64], _rng: &mut R) -> (usize, f64, f64) {
        (KIND_DO_NOTHING, 0.0, 0.0)
    }
}

impl TypeChooser for AssistPolicy {
    fn choose<R: Rng>(&self, feats: &[f64], rng: &mut R) -> (usize, f64, f64) {
        let probs = self.type_probs(feats);
        let kind = crate::pomdp::sample_categorical(&probs, rng);
        (kind, probs[kind].ln(), 0.0)
    }
}

struct LearnerChooser<'a>(&'a PpoLearner);
impl TypeChooser for LearnerChooser<'_> {
    fn choose<R: Rng>(&self, feats: &[f64], rng: &mut R) -> (usize, f64, f64) {
        self.0.sample_action(feats, feats, rng)
    }
}

/// Run one assisted episode: the user acts under memory decay, the
/// assistant tracks (memory, theta) with its filter and intervenes through
/// the chooser. Also returns the PPO transition buffer for training.
#[allow(clippy::too_many_arguments)]
pub fn run_assisted_episode<C: TypeChooser, R: Rng>(
    maze: &Tmaze,
    bank: &PolicyBank,
    theta_true: f64,
    cfg: &AssistConfig,
    chooser: &C,
    npf_seed: u64,
    rng: &mut R,
) -> (AssistEpisode, Vec<Transition>) {
    let decay = maze.decay_model();
    let bound = MemoryBound::new(theta_true);
    let user = bank.policy_for(theta_true).expect("theta on bank grid");
    let init = maze.initial_belief();
    let mut filter = NpfFilter::new(
        &maze.pomdp,
        &decay,
        init.clone(),
        bank,
        &bank.grid,
        NpfConfig {
            n_inner: cfg.n_inner,
            tau: cfg.tau,
            resample: true,
            parallel: true,
            seed: npf_seed,
        },
    );

    let target = rng.random_range(0..maze.config.n_objects);
    let mut st = maze.start_state(target);
    let mut mem = InternalMemory::empty();
    let mut t = 0usize;
    let obs0 = maze.observation_of(st);
    mem = decay.step(&mem, obs0, None, bound, rng);
    let mut critical: Vec<(usize, usize)> = Vec::new();
    if maze.critical_observation(obs0) {
        critical.push((0, obs0));
    }
    let mut prev_act: Option<usize> = None;
    let mut steps = Vec::new();
    let mut buffer = Vec::new();
    let mut success = false;
    loop {
        let feats = ai_features(
            &filter.ps,
            &maze.pomdp,
            &init,
            bank,
            cfg.tau,
            &critical,
            t,
            maze.config.max_steps,
        );
        let (kind, logp, value) = chooser.choose(&feats, rng);
        let assist = select_assist_content(kind, maze, st, &critical);
        if let AssistAction::MemoryHint { k, obs } = assist {
            apply_memory_hint(&mut mem, k, obs).expect("critical index within memory");
        }
        let belief = biased_belief(&maze.pomdp, &mem, &init)
            .expect("decayed true history is model-consistent");
        let dist = softmax_policy(&user.q_values(&belief, t), cfg.tau).expect("finite q");
        let a = assisted_user_action(&dist, &assist, cfg.entropy_threshold, rng);
        let obs_t = maze.observation_of(st);
        t += 1;
        let (next, task_reward, done) = maze.step(st, a, t);
        let r_ai = ai_reward(task_reward, &assist, &cfg.costs);
        if task_reward > 0.0 {
            success = true;
        }
        let refresh = match assist {
            AssistAction::MemoryHint { k, obs } => Some((k, obs)),
            _ => None,
        };
        let hint = match assist {
            AssistAction::ActionHint(h) => Some((h, cfg.entropy_threshold)),
            _ => None,
        };
        filter
            .npf_update_assisted(obs_t, prev_act, a, refresh, hint)
            .expect("true user behavior has positive likelihood");
        prev_act = Some(a);
        steps.push(AssistStep {
            t: t - 1,
            assist,
            user_action: a,
            user_entropy: policy_entropy(&dist),
            task_reward,
            ai_reward: r_ai,
        });
        buffer.push(Transition {
            obs: feats.clone(),
            vobs: feats,
            act: kind,
            reward: r_ai,
            logp,
            value,
            done,
        });
        if done {
            break;
        }
        let next_obs = maze.observation_of(next);
        mem = decay.step(&mem, next_obs, Some(a), bound, rng);
        if maze.critical_observation(next_obs) {
            // The new entry's index equals the action count so far.
            critical.push((t, next_obs));
        }
        st = next;
    }
    (
        AssistEpisode {
            theta_true,
            success,
            steps,
        },
        buffer,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssistCurvePoint {
    pub epoch: usize,
    pub mean_ai_return: f64,
    pub success_rate: f64,
    pub intervention_rate: f64,
}

/// Train the type-policy: every epoch samples one user per grid theta
/// (round-robin), collects assisted episodes with the assistant's filter
/// in the loop, and applies the clipped policy-gradient update.
pub fn train_assist_policy(
    maze: &Tmaze,
    bank: &PolicyBank,
    cfg: &AssistConfig,
    seed: u64,
) -> Result<(AssistPolicy, Vec<AssistCurvePoint>), TrainError> {
    let n_features = bank.grid.len() + N_BASE_FEATURES;
    let mut init_rng = stream(seed, &[0x616931, 0]);
    let mut learner = PpoLearner::new(n_features, n_features, N_ASSIST_TYPES, cfg.ppo.clone(), &mut init_rng);
    let mut curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let collect_one = |e: &usize| {
            let theta = bank.grid[*e % bank.grid.len()];
            let mut rng = stream(seed, &[0x616932, epoch as u64, *e as u64]);
            let npf_seed = crate::rng::stream_id(seed, &[0x616933, epoch as u64, *e as u64]);
            run_assisted_episode(
                maze,
                bank,
                theta,
                cfg,
                &LearnerChooser(&learner),
                npf_seed,
                &mut rng,
            )
        };
        let idx: Vec<usize> = (0..cfg.episodes_per_epoch).collect();
        #[cfg(feature = "parallel")]
        let collected: Vec<_> = idx.par_iter().map(collect_one).collect();
        #[cfg(not(feature = "parallel"))]
        let collected: Vec<_> = idx.iter().map(collect_one).collect();

        let mut buffer = Vec::new();
        let mut returns = 0.0;
        let mut successes = 0usize;
        let mut interventions = 0usize;
        let mut total_steps = 0usize;
        for (episode, transitions) in collected {
            returns += episode.total_ai_reward();
            successes += episode.success as usize;
            interventions += episode.intervention_count();
            total_steps += episode.steps.len();
            buffer.extend(transitions);
        }
        let mut upd_rng = stream(seed, &[0x616934, epoch as u64]);
        learner.update(&buffer, &mut upd_rng)?;
        curve.push(AssistCurvePoint {
            epoch,
            mean_ai_return: returns / cfg.episodes_per_epoch as f64,
            success_rate: successes as f64 / cfg.episodes_per_epoch as f64,
            intervention_rate: interventions as f64 / total_steps as f64,
        });
    }
    Ok((AssistPolicy::from_net(learner.policy.clone(), seed), curve))
}

/// Per-theta evaluation report (the source data for intervention-mix and
/// effectiveness tables).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssistReport {
    pub theta: f64,
    pub episodes: usize,
    pub do_nothing_frac: f64,
    pub action_hint_frac: f64,
    pub memory_hint_frac: f64,
    pub interventions_per_step: f64,
    pub mean_ai_reward: f64,
    pub success_rate: f64,
}

pub fn evaluate_assistance<C: TypeChooser + Sync>(
    maze: &Tmaze,
    bank: &PolicyBank,
    chooser: &C,
    thetas: &[f64],
    episodes: usize,
    cfg: &AssistConfig,
    seed: u64,
) -> Vec<AssistReport> {
    thetas
        .iter()
        .map(|theta| {
            let run_one = |e: &usize| {
                let mut rng = stream(seed, &[0x616935, (theta * 1000.0) as u64, *e as u64]);
                let npf_seed =
                    crate::rng::stream_id(seed, &[0x616936, (theta * 1000.0) as u64, *e as u64]);
                run_assisted_episode(maze, bank, *theta, cfg, chooser, npf_seed, &mut rng).0
            };
            let idx: Vec<usize> = (0..episodes).collect();
            #[cfg(feature = "parallel")]
            let runs: Vec<AssistEpisode> = idx.par_iter().map(run_one).collect();
            #[cfg(not(feature = "parallel"))]
            let runs: Vec<AssistEpisode> = idx.iter().map(run_one).collect();

            let mut counts = [0usize; N_ASSIST_TYPES];
            let mut total_steps = 0usize;
            let mut reward = 0.0;
            let mut successes = 0usize;
            for ep in &runs {
                for s in &ep.steps {
                    counts[s.assist.kind()] += 1;
                }
                total_steps += ep.steps.len();
                reward += ep.total_ai_reward();
                successes += ep.success as usize;
            }
            let n = total_steps.max(1) as f64;
            AssistReport {
                theta: *theta,
                episodes,
                do_nothing_frac: counts[KIND_DO_NOTHING] as f64 / n,
                action_hint_frac: counts[KIND_ACTION_HINT] as f64 / n,
                memory_hint_frac: counts[KIND_MEMORY_HINT] as f64 / n,
                interventions_per_step: (counts[KIND_ACTION_HINT] + counts[KIND_MEMORY_HINT])
                    as f64
                    / n,
                mean_ai_reward: reward / episodes as f64,
                success_rate: successes as f64 / episodes as f64,
            }
        })
        .collect()
}
