//! The bounded-memory user: a per-theta pretrained policy evaluated on the
//! biased belief, the episode simulator that couples memory decay to it,
//! and the policy bank shared by behavior generation and inference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;

use crate::memory::{biased_belief, InternalMemory, MemoryBound};
use crate::nn::Mlp;
use crate::pomdp::{softmax_policy, ActionDistribution, Belief, PomdpError};
use crate::ppo::{PpoConfig, PpoLearner, TrainError, Transition};
use crate::rng::stream;
use crate::tmaze::{Tmaze, N_ACTIONS};

/// Reference temperature: bank q-values are scaled so that
/// `softmax_policy(q, TAU_REF)` reproduces the trained behavior.
pub const TAU_REF: f64 = 3.0;

pub const BANK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("policy bank schema version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("policy bank has no policy for theta={0}")]
    MissingPolicy(f64),
    #[error("policy digest mismatch for theta={0} (file corrupted?)")]
    DigestMismatch(f64),
    #[error("bank i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bank encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// Anything that maps a biased belief (plus step clock) to action values.
pub trait BeliefPolicy {
    fn q_values(&self, belief: &Belief, t: usize) -> Vec<f64>;
}

/// Action selection: greedy on q, or the softmax behavioral model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionRule {
    Greedy,
    Softmax(f64),
}

/// Trained user policy for one memory bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrPolicy {
    pub theta: f64,
    pub seed: u64,
    pub config_digest: u64,
    pub net_digest: u64,
    pub max_steps: usize,
    net: Mlp,
}

/// Input encoding shared by training and evaluation: the belief vector
/// alone. The step clock is deliberately excluded — a policy that can read
/// the time can smuggle forgotten information past the memory bound by
/// encoding it in arrival timing, defeating the decay model it simulates.
pub fn policy_features(belief: &Belief) -> Vec<f64> {
    belief.probs().to_vec()
}

impl CrPolicy {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    fn from_net(net: Mlp, theta: f64, seed: u64, config_digest: u64, max_steps: usize) -> Self {
        let net_digest = net.digest();
        Self {
            theta,
            seed,
            config_digest,
            net_digest,
            max_steps,
            net,
        }
    }
}

impl BeliefPolicy for CrPolicy {
    fn q_values(&self, belief: &Belief, _t: usize) -> Vec<f64> {
        let x = policy_features(belief);
        // Logits are calibrated at TAU_REF: dividing here makes the
        // softmax at the reference temperature equal the trained policy.
        self.net.forward(&x).iter().map(|l| l / TAU_REF).collect()
    }
}

/// Sample one user action; the returned distribution is the same object
/// the inference likelihood evaluates (no train/inference skew).
pub fn act<P: BeliefPolicy + ?Sized, R: Rng>(
    policy: &P,
    belief: &Belief,
    t: usize,
    tau: f64,
    rng: &mut R,
) -> Result<(usize, ActionDistribution), PomdpError> {
    let dist = softmax_policy(&policy.q_values(belief, t), tau)?;
    let a = dist.sample(rng);
    Ok((a, dist))
}

pub fn action_distribution<P: BeliefPolicy + ?Sized>(
    policy: &P,
    belief: &Belief,
    t: usize,
    rule: ActionRule,
) -> Result<ActionDistribution, PomdpError> {
    let q = policy.q_values(belief, t);
    match rule {
        ActionRule::Softmax(tau) => softmax_policy(&q, tau),
        ActionRule::Greedy => {
            let best = q
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let mut probs = vec![0.0; q.len()];
            probs[best] = 1.0;
            ActionDistribution::new(probs)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajStep {
    pub state: usize,
    pub obs: usize,
    pub action: usize,
    pub reward: f64,
    /// Entropy of the action distribution the step was sampled from.
    pub entropy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub theta_policy: f64,
    pub theta_bound: f64,
    pub rule: String,
    pub steps: Vec<TrajStep>,
    pub success: bool,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of steps spent on cells from which the object is visible.
    pub fn object_cell_visits(&self, maze: &Tmaze) -> usize {
        self.steps
            .iter()
            .filter(|s| maze.object_visible(maze.state_of(s.state).position))
            .count()
    }
}

/// Run one full episode of the bounded-memory user.
pub fn run_cr_episode<P: BeliefPolicy + ?Sized, R: Rng>(
    maze: &Tmaze,
    policy: &P,
    bound: MemoryBound,
    rule: ActionRule,
    rng: &mut R,
) -> Trajectory {
    let decay = maze.decay_model();
    let n_objects = maze.config.n_objects;
    let target = rng.random_range(0..n_objects);
    let mut st = maze.start_state(target);
    let mut mem = InternalMemory::empty();
    let mut t = 0usize;
    let mut steps = Vec::new();
    let mut success = false;
    let obs0 = maze.observation_of(st);
    mem = decay.step(&mem, obs0, None, bound, rng);
    loop {
        let belief = biased_belief(&maze.pomdp, &mem, &maze.initial_belief())
            .expect("decayed true history is always model-consistent");
        let dist = action_distribution(policy, &belief, t, rule).expect("finite q-values");
        let a = match rule {
            ActionRule::Greedy => dist.greedy(),
            ActionRule::Softmax(_) => dist.sample(rng),
        };
        let state_idx = maze.state_index(st);
        let obs = maze.observation_of(st);
        t += 1;
        let (next, reward, done) = maze.step(st, a, t);
        steps.push(TrajStep {
            state: state_idx,
            obs,
            action: a,
            reward,
            entropy: crate::pomdp::policy_entropy(&dist),
        });
        if reward > 0.0 {
            success = true;
        }
        if done {
            break;
        }
        let next_obs = maze.observation_of(next);
        mem = decay.step(&mem, next_obs, Some(a), bound, rng);
        st = next;
    }
    Trajectory {
        theta_policy: f64::NAN,
        theta_bound: bound.theta,
        rule: match rule {
            ActionRule::Greedy => "greedy".into(),
            ActionRule::Softmax(tau) => format!("softmax:{tau}"),
        },
        steps,
        success,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub ppo: PpoConfig,
    /// Greedy evaluation episodes per curve point.
    pub eval_episodes: usize,
    pub eval_every: usize,
    /// Consecutive zero-success evaluations tolerated before aborting.
    pub patience: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 800,
            episodes_per_iter: 64,
            ppo: PpoConfig::default(),
            eval_episodes: 100,
            eval_every: 25,
            patience: 8,
        }
    }
}

impl TrainerConfig {
    pub fn digest(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("trainer config serializes");
        let mut h = 0xcbf29ce484222325u64;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub entropy: f64,
}

/// Train one per-theta policy with the clipped policy gradient. Fully
/// deterministic given (maze, bound, cfg, seed, warm_start).
pub fn train_policy(
    maze: &Tmaze,
    bound: MemoryBound,
    cfg: &TrainerConfig,
    seed: u64,
    warm_start: Option<(&Mlp, &Mlp)>,
) -> Result<(CrPolicy, Mlp, Vec<CurvePoint>), TrainError> {
    let theta_tag = (bound.theta * 1000.0).round() as u64;
    let mut init_rng = stream(seed, &[0x7261696e, theta_tag, 0]);
    let input_dim = maze.n_states();
    // Asymmetric actor-critic: the critic additionally sees the normalized
    // episode clock (the reward is time-dependent, so values are not
    // stationary), while the deployed policy stays belief-only.
    let mut learner = PpoLearner::new(input_dim, input_dim + 1, N_ACTIONS, cfg.ppo.clone(), &mut init_rng);
    if let Some((policy_net, value_net)) = warm_start {
        learner.policy = policy_net.clone();
        learner.value = value_net.clone();
    }
    let decay = maze.decay_model();
    let mut curve = Vec::new();
    let mut dead_evals = 0usize;

    let base_entropy_coef = cfg.ppo.entropy_coef;
    for iter in 0..cfg.iterations {
        // Linear entropy annealing to a floor: exploration early, a crisp
        // policy at the end. Without the ramp, bounds with a nearly flat
        // reward landscape (high decay rates, where memory rarely informs
        // the decision) drift under the constant bonus instead of settling
        // on the fast direct route; without the floor, low-entropy late
        // phases can lock in degenerate loops before they pay off.
        let frac = iter as f64 / cfg.iterations as f64;
        learner.cfg.entropy_coef = base_entropy_coef * (1.0 - 0.75 * frac);
        let mut rng = stream(seed, &[0x7261696e, theta_tag, 1 + iter as u64]);
        let mut buffer: Vec<Transition> = Vec::new();
        let mut returns = 0.0;
        let mut successes = 0usize;
        for _ in 0..cfg.episodes_per_iter {
            let target = rng.random_range(0..maze.config.n_objects);
            let mut st = maze.start_state(target);
            let mut mem = InternalMemory::empty();
            let obs0 = maze.observation_of(st);
            mem = decay.step(&mem, obs0, None, bound, &mut rng);
            let mut t = 0usize;
            loop {
                let belief = biased_belief(&maze.pomdp, &mem, &maze.initial_belief())
                    .expect("decayed true history is always model-consistent");
                let x = policy_features(&belief);
                let mut vx = x.clone();
                vx.push(t as f64 / maze.config.max_steps as f64);
                let (a, logp, value) = learner.sample_action(&x, &vx, &mut rng);
                t += 1;
                let (next, reward, done) = maze.step(st, a, t);
                buffer.push(Transition {
                    obs: x,
                    vobs: vx,
                    act: a,
                    reward,
                    logp,
                    value,
                    done,
                });
                returns += reward;
                if reward > 0.0 {
                    successes += 1;
                }
                if done {
                    break;
                }
                let next_obs = maze.observation_of(next);
                mem = decay.step(&mem, next_obs, Some(a), bound, &mut rng);
                st = next;
            }
        }
        let stats = learner.update(&buffer, &mut rng)?;
        if iter % cfg.eval_every == 0 || iter + 1 == cfg.iterations {
            curve.push(CurvePoint {
                iteration: iter,
                mean_return: returns / cfg.episodes_per_iter as f64,
                success_rate: successes as f64 / cfg.episodes_per_iter as f64,
                entropy: stats.entropy,
            });
            // Divergence guard: sampled behavior collapsing to zero return
            // for a sustained window means the optimizer blew up.
            if returns == 0.0 {
                dead_evals += 1;
                if dead_evals > cfg.patience {
                    return Err(TrainError::TrainingDiverged(
                        "sampled return stuck at zero past patience window".into(),
                    ));
                }
            } else {
                dead_evals = 0;
            }
        }
    }
    let policy = CrPolicy::from_net(
        learner.policy.clone(),
        bound.theta,
        seed,
        cfg.digest(),
        maze.config.max_steps,
    );
    Ok((policy, learner.value.clone(), curve))
}

/// Per-theta policies over an ascending grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyBank {
    pub version: u32,
    pub grid: Vec<f64>,
    pub policies: Vec<CrPolicy>,
}

impl PolicyBank {
    pub fn new(grid: Vec<f64>, policies: Vec<CrPolicy>) -> Self {
        assert_eq!(grid.len(), policies.len());
        Self {
            version: BANK_SCHEMA_VERSION,
            grid,
            policies,
        }
    }

    pub fn policy_for(&self, theta: f64) -> Result<&CrPolicy, BankError> {
        self.grid
            .iter()
            .position(|g| (g - theta).abs() < 1e-9)
            .map(|i| &self.policies[i])
            .ok_or(BankError::MissingPolicy(theta))
    }

    pub fn validate(&self) -> Result<(), BankError> {
        if self.version != BANK_SCHEMA_VERSION {
            return Err(BankError::VersionMismatch {
                found: self.version,
                expected: BANK_SCHEMA_VERSION,
            });
        }
        if self.grid.len() != self.policies.len() {
            return Err(BankError::MissingPolicy(f64::NAN));
        }
        for (g, p) in self.grid.iter().zip(&self.policies) {
            if (g - p.theta).abs() > 1e-9 {
                return Err(BankError::MissingPolicy(*g));
            }
            if p.net.digest() != p.net_digest {
                return Err(BankError::DigestMismatch(*g));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), BankError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BankError> {
        let json = std::fs::read_to_string(path)?;
        let bank: Self = serde_json::from_str(&json)?;
        bank.validate()?;
        Ok(bank)
    }
}

/// Train the whole bank as a curriculum along the grid: each theta's nets
/// warm-start from the previous (lower) theta's converged nets. Strategies
/// that only pay off through rare memory-survival events (recheck loops at
/// high decay rates) are nearly impossible to discover from scratch but
/// easy to *retain or unlearn* from a neighboring policy, which is exactly
/// the decision each theta faces. The chain is inherently sequential, so
/// bank training itself is not data-parallel; per-theta results are still
/// deterministic (fixed rng streams, deterministic initialization).
pub fn train_bank(
    maze: &Tmaze,
    grid: &[f64],
    cfg: &TrainerConfig,
    seed: u64,
) -> Result<(PolicyBank, Vec<Vec<CurvePoint>>), TrainError> {
    let mut policies = Vec::with_capacity(grid.len());
    let mut curves = Vec::with_capacity(grid.len());
    let mut prev: Option<(Mlp, Mlp)> = None;
    for theta in grid {
        let warm = prev.as_ref().map(|(p, v)| (p, v));
        let (policy, value, curve) =
            train_policy(maze, MemoryBound::new(*theta), cfg, seed, warm)?;
        prev = Some((policy.net.clone(), value));
        policies.push(policy);
        curves.push(curve);
    }
    Ok((PolicyBank::new(grid.to_vec(), policies), curves))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tmaze::{build_tmaze, TmazeConfig};

    struct StubPolicy(Vec<f64>);
    impl BeliefPolicy for StubPolicy {
        fn q_values(&self, _belief: &Belief, _t: usize) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn high_tau_concentrates_on_argmax() {
        let policy = StubPolicy(vec![0.1, 0.9, 0.3, 0.2, 0.0]);
        let belief = Belief::uniform(4);
        let mut rng = stream(31, &[0]);
        let mut hits = 0usize;
        for _ in 0..10_000 {
            let (a, _) = act(&policy, &belief, 0, 50.0, &mut rng).unwrap();
            if a == 1 {
                hits += 1;
            }
        }
        assert!(hits >= 9_900, "argmax frequency {hits}/10000");
    }

    #[test]
    fn equal_q_gives_uniform_frequencies() {
        let policy = StubPolicy(vec![0.4; 5]);
        let belief = Belief::uniform(4);
        let mut rng = stream(32, &[0]);
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let (a, _) = act(&policy, &belief, 0, 3.0, &mut rng).unwrap();
            counts[a] += 1;
        }
        let p = 0.2;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma);
        }
    }

    fn tiny_cfg() -> TrainerConfig {
        TrainerConfig {
            iterations: 3,
            episodes_per_iter: 8,
            eval_episodes: 4,
            eval_every: 1,
            patience: 100,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let maze = build_tmaze(&TmazeConfig::default()).unwrap();
        let cfg = tiny_cfg();
        let (p1, _, _) = train_policy(&maze, MemoryBound::new(0.5), &cfg, 7, None).unwrap();
        let (p2, _, _) = train_policy(&maze, MemoryBound::new(0.5), &cfg, 7, None).unwrap();
        assert_eq!(p1.net_digest, p2.net_digest);
        let (p3, _, _) = train_policy(&maze, MemoryBound::new(0.5), &cfg, 8, None).unwrap();
        assert_ne!(p1.net_digest, p3.net_digest);
    }

    #[test]
    fn bank_round_trip_and_integrity() {
        let maze = build_tmaze(&TmazeConfig::default()).unwrap();
        let cfg = tiny_cfg();
        let grid = vec![0.0, 1.0];
        let (bank, _) = train_bank(&maze, &grid, &cfg, 3).unwrap();
        let dir = std::env::temp_dir().join("crlab-bank-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bank.json");
        bank.save(&path).unwrap();
        let loaded = PolicyBank::load(&path).unwrap();

        let mut rng = stream(33, &[0]);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..maze.n_states()).map(|_| rng.random::<f64>()).collect();
            let z: f64 = raw.iter().sum();
            let belief = Belief::new(raw.iter().map(|x| x / z).collect()).unwrap();
            for theta in &grid {
                let q0 = bank.policy_for(*theta).unwrap().q_values(&belief, 3);
                let q1 = loaded.policy_for(*theta).unwrap().q_values(&belief, 3);
                assert_eq!(q0, q1);
            }
        }
        assert!(matches!(
            loaded.policy_for(0.5),
            Err(BankError::MissingPolicy(_))
        ));

        // Corrupt one stored parameter: load must fail the digest check.
        let json = std::fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["policies"][0]["net"]["biases"][0][0] = serde_json::json!(42.0);
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(
            PolicyBank::load(&path),
            Err(BankError::DigestMismatch(_))
        ));
    }

    #[test]
    fn episode_runs_are_deterministic_and_well_formed() {
        let maze = build_tmaze(&TmazeConfig::default()).unwrap();
        let cfg = tiny_cfg();
        let (policy, _, _) = train_policy(&maze, MemoryBound::new(0.0), &cfg, 5, None).unwrap();
        let run = |seed: u64| {
            let mut rng = stream(seed, &[9]);
            run_cr_episode(&maze, &policy, MemoryBound::new(0.0), ActionRule::Softmax(3.0), &mut rng)
        };
        let a = run(1);
        let b = run(1);
        assert_eq!(
            a.steps.iter().map(|s| s.action).collect::<Vec<_>>(),
            b.steps.iter().map(|s| s.action).collect::<Vec<_>>()
        );
        assert!(a.len() <= maze.config.max_steps);
        // Reward nonzero only at the final step.
        for s in &a.steps[..a.len() - 1] {
            assert_eq!(s.reward, 0.0);
        }
    }
}
