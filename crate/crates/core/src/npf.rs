//! Joint online inference of (memory, theta) from passively observed
//! actions: a nested particle filter with a static outer theta grid
//! (exact weight updates, no outer resampling) and inner Monte-Carlo
//! memory hypotheses, plus a brute-force exact posterior for micro
//! instances and the posterior error metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::memory::{biased_belief, InternalMemory, MemoryBound, MemoryError, ObjectDecay};
use crate::pomdp::{Belief, DiscretePomdp, PomdpError};
use crate::rng::stream;

const PROP_TAG: u64 = 0x6e70662d70; // particle propagation streams
const RESAMPLE_TAG: u64 = 0x6e70662d72; // inner resampling streams

#[derive(Debug, Error)]
pub enum NpfError {
    #[error("all particles have zero likelihood (model misspecification?)")]
    AllWeightsZero,
    #[error("exact posterior needs {needed} hypotheses, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
}

/// Likelihood model: the per-theta action distribution at a biased belief.
/// `t` is the in-episode step count at which the action was chosen.
pub trait PolicyProvider: Sync {
    fn action_probs(&self, theta: f64, belief: &Belief, t: usize, tau: f64) -> Vec<f64>;
}

impl PolicyProvider for crate::agent::PolicyBank {
    fn action_probs(&self, theta: f64, belief: &Belief, t: usize, tau: f64) -> Vec<f64> {
        use crate::agent::BeliefPolicy;
        let policy = self.policy_for(theta).expect("grid theta present in bank");
        crate::pomdp::softmax_policy(&policy.q_values(belief, t), tau)
            .expect("finite q-values")
            .probs()
            .to_vec()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerParticle {
    pub memory: InternalMemory,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OuterParticle {
    pub theta: f64,
    pub weight: f64,
    pub inner: Vec<InnerParticle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NestedParticleSet {
    pub outer: Vec<OuterParticle>,
    /// Updates applied since construction (global evidence clock).
    pub t: u64,
    /// Episode counter; bumped by [`NpfFilter::episode_reset`].
    pub episode: u64,
}

impl NestedParticleSet {
    pub fn n_outer(&self) -> usize {
        self.outer.len()
    }

    pub fn n_inner(&self) -> usize {
        self.outer.first().map_or(0, |o| o.inner.len())
    }

    pub fn outer_weights(&self) -> Vec<f64> {
        self.outer.iter().map(|o| o.weight).collect()
    }

    pub fn outer_ess(&self) -> f64 {
        ess(&self.outer_weights())
    }

    pub fn mean_inner_ess(&self) -> f64 {
        let sum: f64 = self
            .outer
            .iter()
            .map(|o| ess(&o.inner.iter().map(|p| p.weight).collect::<Vec<_>>()))
            .sum();
        sum / self.outer.len() as f64
    }

    /// Weight invariants; checked after every update in debug builds.
    pub fn check_invariants(&self) -> bool {
        let outer_sum: f64 = self.outer.iter().map(|o| o.weight).sum();
        if (outer_sum - 1.0).abs() > 1e-9 {
            return false;
        }
        let len0 = self.outer[0].inner[0].memory.len();
        for o in &self.outer {
            if o.weight < 0.0 {
                return false;
            }
            let inner_sum: f64 = o.inner.iter().map(|p| p.weight).sum();
            if (inner_sum - 1.0).abs() > 1e-9 {
                return false;
            }
            for p in &o.inner {
                if p.weight < 0.0 || p.memory.len() != len0 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub weights: Vec<f64>,
    pub mean: f64,
    pub map: f64,
    pub outer_ess: f64,
    pub mean_inner_ess: f64,
}

/// One outer particle per grid value, uniform weights, empty memories.
pub fn npf_init(theta_grid: &[f64], n_inner: usize) -> NestedParticleSet {
    assert!(!theta_grid.is_empty() && n_inner >= 1);
    let outer = theta_grid
        .iter()
        .map(|theta| OuterParticle {
            theta: *theta,
            weight: 1.0 / theta_grid.len() as f64,
            inner: (0..n_inner)
                .map(|_| InnerParticle {
                    memory: InternalMemory::empty(),
                    weight: 1.0 / n_inner as f64,
                })
                .collect(),
        })
        .collect();
    NestedParticleSet {
        outer,
        t: 0,
        episode: 0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpfConfig {
    pub n_inner: usize,
    pub tau: f64,
    /// Inner systematic resampling at ESS < N/2. `false` is the strict
    /// mode with no resampling at all.
    pub resample: bool,
    /// Process outer particles on the rayon pool. Ignored (always
    /// sequential) when the `parallel` feature is disabled; results are
    /// bit-identical either way.
    pub parallel: bool,
    pub seed: u64,
}

impl Default for NpfConfig {
    fn default() -> Self {
        Self {
            n_inner: 200,
            tau: 3.0,
            resample: true,
            parallel: true,
            seed: 0,
        }
    }
}

/// The online filter: owns the particle set, borrows the environment
/// model, decay family, and likelihood provider.
pub struct NpfFilter<'a, P: PolicyProvider + ?Sized> {
    pub model: &'a DiscretePomdp,
    pub decay: &'a ObjectDecay,
    pub initial_belief: Belief,
    pub provider: &'a P,
    pub cfg: NpfConfig,
    pub ps: NestedParticleSet,
}

/// Per-particle work product of one update, before any normalization.
struct InnerStep {
    memory: InternalMemory,
    raw_weight: f64,
}

impl<'a, P: PolicyProvider + ?Sized> NpfFilter<'a, P> {
    pub fn new(
        model: &'a DiscretePomdp,
        decay: &'a ObjectDecay,
        initial_belief: Belief,
        provider: &'a P,
        theta_grid: &[f64],
        cfg: NpfConfig,
    ) -> Self {
        let ps = npf_init(theta_grid, cfg.n_inner);
        Self {
            model,
            decay,
            initial_belief,
            provider,
            cfg,
            ps,
        }
    }

    /// One filter update: propagate every memory particle with the newly
    /// observed (obs at t-1, act at t-2), score it by the likelihood of
    /// the observed action a_{t-1}, and apply the exact nested reweight.
    pub fn npf_update(
        &mut self,
        obs_prev: usize,
        act_prev2: Option<usize>,
        act_evidence: usize,
    ) -> Result<PosteriorSummary, NpfError> {
        self.npf_update_assisted(obs_prev, act_prev2, act_evidence, None, None)
    }

    /// Assisted variant: `refresh = (k, o_k)` rewrites memory entry k
    /// after decay (a memory hint the user fully trusts); `hint = (a, H)`
    /// switches the likelihood to the assisted policy — deterministic
    /// acceptance of the hinted action wherever the particle's own action
    /// entropy reaches H, the plain policy elsewhere. With both `None`
    /// this is exactly [`NpfFilter::npf_update`].
    pub fn npf_update_assisted(
        &mut self,
        obs_prev: usize,
        act_prev2: Option<usize>,
        act_evidence: usize,
        refresh: Option<(usize, usize)>,
        hint: Option<(usize, f64)>,
    ) -> Result<PosteriorSummary, NpfError> {
        let t_global = self.ps.t;
        let episode = self.ps.episode;
        let seed = self.cfg.seed;
        let tau = self.cfg.tau;
        let model = self.model;
        let decay = self.decay;
        let provider = self.provider;
        let init = &self.initial_belief;

        let step_outer = |(i, outer): (usize, &OuterParticle)| -> (Vec<InnerStep>, f64) {
            let bound = MemoryBound::new(outer.theta);
            let mut steps = Vec::with_capacity(outer.inner.len());
            let mut raw_sum = 0.0;
            for (j, particle) in outer.inner.iter().enumerate() {
                let mut rng = stream(seed, &[PROP_TAG, episode, t_global, i as u64, j as u64]);
                let mut memory = decay.step(&particle.memory, obs_prev, act_prev2, bound, &mut rng);
                if let Some((k, o_k)) = refresh {
                    memory.set_obs(k, o_k).expect("hint index within memory");
                }
                // The acting clock: the user had taken len-1 actions when
                // choosing the evidence action.
                let t_act = memory.len() - 1;
                let likelihood = match biased_belief(model, &memory, init) {
                    Ok(belief) => {
                        let probs = provider.action_probs(outer.theta, &belief, t_act, tau);
                        match hint {
                            Some((a, h)) if entropy_of(&probs) >= h => {
                                if act_evidence == a {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            _ => probs[act_evidence],
                        }
                    }
                    // A memory hypothesis the model cannot explain simply dies.
                    Err(MemoryError::CorruptedMemoryContradiction) => 0.0,
                    Err(e) => panic!("biased belief failed: {e}"),
                };
                let raw = particle.weight * likelihood;
                raw_sum += raw;
                steps.push(InnerStep {
                    memory,
                    raw_weight: raw,
                });
            }
            (steps, raw_sum)
        };

        #[cfg(feature = "parallel")]
        let stepped: Vec<(Vec<InnerStep>, f64)> = if self.cfg.parallel {
            self.ps.outer.par_iter().enumerate().map(step_outer).collect()
        } else {
            self.ps.outer.iter().enumerate().map(step_outer).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let stepped: Vec<(Vec<InnerStep>, f64)> =
            self.ps.outer.iter().enumerate().map(step_outer).collect();

        // Exact nested reweight: w_ij <- w_ij * L_ij, w_i <- w_i * sum_j w_ij,
        // then global outer normalization and per-set inner normalization.
        let mut outer_norm = 0.0;
        for (outer, (_, raw_sum)) in self.ps.outer.iter_mut().zip(&stepped) {
            outer.weight *= raw_sum;
            outer_norm += outer.weight;
        }
        if outer_norm <= 0.0 {
            return Err(NpfError::AllWeightsZero);
        }
        for (i, (outer, (steps, raw_sum))) in
            self.ps.outer.iter_mut().zip(stepped.into_iter()).enumerate()
        {
            outer.weight /= outer_norm;
            let n = steps.len() as f64;
            for (particle, step) in outer.inner.iter_mut().zip(steps) {
                particle.memory = step.memory;
                // A fully dead inner set returns to uniform; its outer
                // weight is zero so it can never recover mass.
                particle.weight = if raw_sum > 0.0 {
                    step.raw_weight / raw_sum
                } else {
                    1.0 / n
                };
            }
            if self.cfg.resample {
                let weights: Vec<f64> = outer.inner.iter().map(|p| p.weight).collect();
                if ess(&weights) < n / 2.0 {
                    let mut rng = stream(seed, &[RESAMPLE_TAG, episode, t_global, i as u64]);
                    outer.inner = systematic_resample(&outer.inner, &mut rng);
                }
            }
        }
        self.ps.t += 1;
        debug_assert!(self.ps.check_invariants());
        Ok(self.summary())
    }

    /// Episode boundary: fresh empty memories and uniform inner weights;
    /// outer theta weights persist across episodes.
    pub fn episode_reset(&mut self) {
        let n = self.cfg.n_inner;
        for outer in &mut self.ps.outer {
            outer.inner = (0..n)
                .map(|_| InnerParticle {
                    memory: InternalMemory::empty(),
                    weight: 1.0 / n as f64,
                })
                .collect();
        }
        self.ps.episode += 1;
    }

    pub fn particles(&self) -> &NestedParticleSet {
        &self.ps
    }

    pub fn summary(&self) -> PosteriorSummary {
        PosteriorSummary {
            weights: self.ps.outer_weights(),
            mean: posterior_mean(&self.ps),
            map: posterior_map(&self.ps),
            outer_ess: self.ps.outer_ess(),
            mean_inner_ess: self.ps.mean_inner_ess(),
        }
    }
}

pub fn posterior_mean(ps: &NestedParticleSet) -> f64 {
    ps.outer.iter().map(|o| o.weight * o.theta).sum()
}

/// Argmax over outer weights; ties break toward the smaller theta.
pub fn posterior_map(ps: &NestedParticleSet) -> f64 {
    let max_w = ps.outer.iter().map(|o| o.weight).fold(f64::NEG_INFINITY, f64::max);
    ps.outer
        .iter()
        .filter(|o| (o.weight - max_w).abs() <= 1e-15)
        .map(|o| o.theta)
        .fold(f64::INFINITY, f64::min)
}

pub fn pm_error(ps: &NestedParticleSet, theta_true: f64) -> f64 {
    (posterior_mean(ps) - theta_true).abs()
}

pub fn map_error(ps: &NestedParticleSet, theta_true: f64) -> f64 {
    (posterior_map(ps) - theta_true).abs()
}

fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Effective sample size 1/Σw² of a normalized weight vector.
pub fn ess(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return 0.0;
    }
    let sq: f64 = weights.iter().map(|w| (w / sum) * (w / sum)).sum();
    1.0 / sq
}

/// Systematic resampling: one uniform offset, N evenly spaced pointers.
/// Expected multiplicity of particle j is N·w_j.
pub fn systematic_resample<R: Rng>(inner: &[InnerParticle], rng: &mut R) -> Vec<InnerParticle> {
    let n = inner.len();
    let offset = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut k = 0usize;
    for j in 0..n {
        let pointer = offset + j as f64 / n as f64;
        while k < n - 1 && cum + inner[k].weight < pointer {
            cum += inner[k].weight;
            k += 1;
        }
        out.push(InnerParticle {
            memory: inner[k].memory.clone(),
            weight: 1.0 / n as f64,
        });
    }
    out
}

/// Straight-line transcription of the nested reweight (lines 10-12):
/// given previous weights and per-particle likelihoods, return the new
/// (outer, inner) weights. Reference implementation for equivalence tests.
pub fn nested_reweight_reference(
    outer_w: &[f64],
    inner_w: &[Vec<f64>],
    likelihoods: &[Vec<f64>],
) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut new_inner: Vec<Vec<f64>> = Vec::with_capacity(inner_w.len());
    let mut new_outer = Vec::with_capacity(outer_w.len());
    for i in 0..outer_w.len() {
        let raw: Vec<f64> = inner_w[i]
            .iter()
            .zip(&likelihoods[i])
            .map(|(w, l)| w * l)
            .collect();
        let s: f64 = raw.iter().sum();
        new_outer.push(outer_w[i] * s);
        new_inner.push(if s > 0.0 {
            raw.iter().map(|r| r / s).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        });
    }
    let z: f64 = new_outer.iter().sum();
    if z <= 0.0 {
        return None;
    }
    for w in new_outer.iter_mut() {
        *w /= z;
    }
    Some((new_outer, new_inner))
}

/// Passively observed evidence: the true observation/action stream of one
/// episode (obs[k] precedes acts[k]; the trailing observation after the
/// last action is not part of the evidence).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvidenceStream {
    pub obs: Vec<usize>,
    pub acts: Vec<usize>,
}

/// Simulate a bounded-memory user on an arbitrary tabular model and record
/// the true (obs, act) evidence for one episode of `horizon` actions.
pub fn simulate_user_history<P: PolicyProvider + ?Sized, R: Rng>(
    model: &DiscretePomdp,
    decay: &ObjectDecay,
    provider: &P,
    theta_true: f64,
    tau: f64,
    initial_belief: &Belief,
    initial_state: usize,
    horizon: usize,
    rng: &mut R,
) -> EvidenceStream {
    let bound = MemoryBound::new(theta_true);
    let mut state = initial_state;
    let mut mem = InternalMemory::empty();
    let mut ev = EvidenceStream::default();
    let obs0 = model.sample_observation(state, rng);
    ev.obs.push(obs0);
    mem = decay.step(&mem, obs0, None, bound, rng);
    for t in 0..horizon {
        let belief = biased_belief(model, &mem, initial_belief)
            .expect("decayed true history is model-consistent");
        let probs = provider.action_probs(theta_true, &belief, t, tau);
        let a = crate::pomdp::sample_categorical(&probs, rng);
        ev.acts.push(a);
        state = model.sample_transition(state, a, rng);
        if t + 1 < horizon {
            let obs = model.sample_observation(state, rng);
            ev.obs.push(obs);
            mem = decay.step(&mem, obs, Some(a), bound, rng);
        }
    }
    ev
}

/// Run a filter over one evidence stream, returning the summary after
/// every update.
pub fn run_npf<P: PolicyProvider + ?Sized>(
    filter: &mut NpfFilter<'_, P>,
    ev: &EvidenceStream,
) -> Result<Vec<PosteriorSummary>, NpfError> {
    assert_eq!(ev.obs.len(), ev.acts.len());
    let mut out = Vec::with_capacity(ev.acts.len());
    for k in 0..ev.acts.len() {
        let act_prev2 = if k == 0 { None } else { Some(ev.acts[k - 1]) };
        out.push(filter.npf_update(ev.obs[k], act_prev2, ev.acts[k])?);
    }
    Ok(out)
}

/// Exact joint posterior over (theta, corrupted memory) by enumerating
/// every corruption outcome of every prefix. Memories with identical
/// remembered observations are merged (actions are shared), so the
/// hypothesis count stays bounded on micro instances.
pub fn exact_joint_posterior<P: PolicyProvider + ?Sized>(
    model: &DiscretePomdp,
    decay: &ObjectDecay,
    theta_grid: &[f64],
    ev: &EvidenceStream,
    tau: f64,
    provider: &P,
    initial_belief: &Belief,
    budget: usize,
) -> Result<ExactPosterior, NpfError> {
    assert_eq!(ev.obs.len(), ev.acts.len());
    let prior = 1.0 / theta_grid.len() as f64;
    let mut marginals = Vec::with_capacity(theta_grid.len());
    let mut joints = Vec::with_capacity(theta_grid.len());
    for theta in theta_grid {
        let bound = MemoryBound::new(*theta);
        // Distribution over remembered-observation sequences.
        let mut dist: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (mem, p) in decay.outcomes(&InternalMemory::empty(), ev.obs[0], None, bound) {
            *dist.entry(obs_key(&mem)).or_insert(0.0) += p;
        }
        for k in 0..ev.acts.len() {
            // Score the observed action under each memory hypothesis.
            let mut scored: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            for (key, p) in dist {
                let mem = mem_from_key(&key, &ev.acts[..k]);
                let w = match biased_belief(model, &mem, initial_belief) {
                    Ok(belief) => p * provider.action_probs(*theta, &belief, k, tau)[ev.acts[k]],
                    Err(MemoryError::CorruptedMemoryContradiction) => 0.0,
                    Err(e) => panic!("biased belief failed: {e}"),
                };
                if w > 0.0 {
                    scored.insert(key, w);
                }
            }
            if k + 1 < ev.acts.len() {
                // Propagate to the next observation with full decay enumeration.
                let mut next: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
                for (key, p) in &scored {
                    let mem = mem_from_key(key, &ev.acts[..=k]);
                    for (m2, q) in decay.outcomes(&mem, ev.obs[k + 1], Some(ev.acts[k]), bound) {
                        *next.entry(obs_key(&m2)).or_insert(0.0) += p * q;
                    }
                    if next.len() > budget {
                        return Err(NpfError::BudgetExceeded {
                            needed: next.len(),
                            budget,
                        });
                    }
                }
                dist = next;
            } else {
                dist = scored;
            }
        }
        let z: f64 = dist.values().sum();
        marginals.push(prior * z);
        joints.push(dist);
    }
    let total: f64 = marginals.iter().sum();
    if total <= 0.0 {
        return Err(NpfError::AllWeightsZero);
    }
    for m in marginals.iter_mut() {
        *m /= total;
    }
    Ok(ExactPosterior {
        theta_grid: theta_grid.to_vec(),
        theta_marginal: marginals,
        joint: joints
            .into_iter()
            .map(|d| d.into_iter().collect::<Vec<_>>())
            .collect(),
        normalizer: total,
    })
}

/// Exact posterior: theta marginal plus, per theta, the unnormalized
/// weight of every surviving remembered-observation sequence.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub theta_grid: Vec<f64>,
    pub theta_marginal: Vec<f64>,
    pub joint: Vec<Vec<(Vec<usize>, f64)>>,
    pub normalizer: f64,
}

fn obs_key(mem: &InternalMemory) -> Vec<usize> {
    mem.entries().iter().map(|e| e.obs).collect()
}

/// Rebuild a memory from its remembered observations; entry k pairs with
/// acts[k-1], the first entry has no action.
fn mem_from_key(key: &[usize], acts: &[usize]) -> InternalMemory {
    InternalMemory::from_entries(
        key.iter()
            .enumerate()
            .map(|(k, obs)| crate::memory::MemoryEntry {
                obs: *obs,
                act: if k == 0 { None } else { Some(acts[k - 1]) },
            })
            .collect(),
    )
}

/// Total variation distance between two distributions on the same grid.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream as rng_stream;

    /// theta-agnostic stub: one fixed action distribution everywhere.
    struct FixedProvider(Vec<f64>);
    impl PolicyProvider for FixedProvider {
        fn action_probs(&self, _theta: f64, _b: &Belief, _t: usize, _tau: f64) -> Vec<f64> {
            self.0.clone()
        }
    }

    /// Micro likelihood: action 0 preferred in proportion to belief in
    /// state 0, sharpened by theta (so data is informative about theta).
    struct MicroProvider;
    impl PolicyProvider for MicroProvider {
        fn action_probs(&self, theta: f64, b: &Belief, _t: usize, tau: f64) -> Vec<f64> {
            let q = [b.probs()[0] * (1.0 + theta), b.probs()[1] * (1.0 - 0.5 * theta)];
            crate::pomdp::softmax_policy(&q, tau).unwrap().probs().to_vec()
        }
    }

    fn micro_model() -> DiscretePomdp {
        // |S|=2, |A|=2, base obs {0,1}, coarse obs 2 over both.
        DiscretePomdp::new(
            2,
            2,
            3,
            vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.6, 0.4],
            vec![0.8, 0.2, 0.0, 0.3, 0.7, 0.0],
            vec![0.0; 4],
            1.0,
            20,
            Some(vec![vec![0], vec![1], vec![0, 1]]),
        )
        .unwrap()
    }

    fn micro_decay() -> ObjectDecay {
        ObjectDecay::new(vec![Some(2), Some(2), None])
    }

    #[test]
    fn init_is_uniform() {
        let grid: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
        let ps = npf_init(&grid, 50);
        for o in &ps.outer {
            assert!((o.weight - 1.0 / 11.0).abs() < 1e-12);
        }
        assert!((posterior_mean(&ps) - 0.5).abs() < 1e-12);
        assert!((ps.outer_ess() - 11.0).abs() < 1e-9);
        assert!((ps.mean_inner_ess() - 50.0).abs() < 1e-9);
        assert!(ps.check_invariants());
    }

    #[test]
    fn uninformative_single_action_keeps_posterior_uniform() {
        let model = micro_model();
        let decay = micro_decay();
        let provider = FixedProvider(vec![1.0]);
        let grid = [0.0, 0.5, 1.0];
        let mut filter = NpfFilter::new(
            &model,
            &decay,
            Belief::uniform(2),
            &provider,
            &grid,
            NpfConfig {
                n_inner: 20,
                ..Default::default()
            },
        );
        for k in 0..4 {
            let s = filter
                .npf_update(k % 2, if k == 0 { None } else { Some(0) }, 0)
                .unwrap();
            for w in &s.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn theta_independent_likelihood_leaves_outer_unchanged() {
        let model = micro_model();
        let decay = micro_decay();
        let provider = FixedProvider(vec![0.7, 0.3]);
        let grid = [0.0, 0.5, 1.0];
        let mut filter = NpfFilter::new(
            &model,
            &decay,
            Belief::uniform(2),
            &provider,
            &grid,
            NpfConfig {
                n_inner: 30,
                ..Default::default()
            },
        );
        for k in 0..5 {
            let s = filter
                .npf_update(k % 2, if k == 0 { None } else { Some(1) }, k % 2)
                .unwrap();
            for w in &s.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reweight_matches_reference_on_random_inputs() {
        let mut rng = rng_stream(41, &[0]);
        for _ in 0..200 {
            let n_outer = 4;
            let n_inner = 6;
            let outer_w: Vec<f64> = {
                let raw: Vec<f64> = (0..n_outer).map(|_| rng.random::<f64>()).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|x| x / z).collect()
            };
            let inner_w: Vec<Vec<f64>> = (0..n_outer)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_inner).map(|_| rng.random::<f64>()).collect();
                    let z: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / z).collect()
                })
                .collect();
            let likelihoods: Vec<Vec<f64>> = (0..n_outer)
                .map(|_| (0..n_inner).map(|_| rng.random::<f64>()).collect())
                .collect();
            let (ref_outer, ref_inner) =
                nested_reweight_reference(&outer_w, &inner_w, &likelihoods).unwrap();
            // In-place version identical to the filter's arithmetic.
            let mut outer2 = outer_w.clone();
            let mut inner2 = inner_w.clone();
            let mut norm = 0.0;
            for i in 0..n_outer {
                let mut s = 0.0;
                for j in 0..n_inner {
                    inner2[i][j] *= likelihoods[i][j];
                    s += inner2[i][j];
                }
                outer2[i] *= s;
                norm += outer2[i];
                for j in 0..n_inner {
                    inner2[i][j] /= s;
                }
            }
            for w in outer2.iter_mut() {
                *w /= norm;
            }
            for i in 0..n_outer {
                assert!((outer2[i] - ref_outer[i]).abs() < 1e-12);
                for j in 0..n_inner {
                    assert!((inner2[i][j] - ref_inner[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ess_closed_forms() {
        assert!((ess(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert!((ess(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(ess(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn systematic_resample_multiplicities() {
        let weights = [0.5, 0.3, 0.15, 0.05];
        let inner: Vec<InnerParticle> = weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                InnerParticle {
                    memory: InternalMemory::from_entries(vec![crate::memory::MemoryEntry {
                        obs: j,
                        act: None,
                    }]),
                    weight: *w,
                }
            })
            .collect();
        let n_rounds = 10_000;
        let mut counts = [0usize; 4];
        for r in 0..n_rounds {
            let mut rng = rng_stream(42, &[r]);
            for p in systematic_resample(&inner, &mut rng) {
                counts[p.memory.entries()[0].obs] += 1;
                assert!((p.weight - 0.25).abs() < 1e-12);
            }
        }
        for (j, w) in weights.iter().enumerate() {
            let expected = n_rounds as f64 * 4.0 * w;
            // Systematic resampling has sub-multinomial variance; the
            // multinomial 3 sigma bound is a safe envelope.
            let sigma = (n_rounds as f64 * 4.0 * w * (1.0 - w)).sqrt();
            assert!(
                (counts[j] as f64 - expected).abs() < 3.0 * sigma,
                "particle {j}: {} vs {expected}",
                counts[j]
            );
        }
    }

    #[test]
    fn posterior_point_estimates() {
        let mut ps = npf_init(&[0.2, 0.6], 1);
        ps.outer[0].weight = 0.1;
        ps.outer[1].weight = 0.9;
        assert!((posterior_mean(&ps) - 0.56).abs() < 1e-12);
        assert!((posterior_map(&ps) - 0.6).abs() < 1e-12);
        assert!((pm_error(&ps, 0.5) - 0.06).abs() < 1e-12);
        assert!((map_error(&ps, 0.5) - 0.1).abs() < 1e-12);

        let tie = npf_init(&[0.3, 0.7], 1);
        assert_eq!(posterior_map(&tie), 0.3);
    }

    #[test]
    fn exact_posterior_one_step_is_bayes_rule() {
        let model = micro_model();
        let decay = micro_decay();
        let provider = MicroProvider;
        let grid = [0.0, 0.5, 1.0];
        let ev = EvidenceStream {
            obs: vec![0],
            acts: vec![0],
        };
        let post = exact_joint_posterior(
            &model,
            &decay,
            &grid,
            &ev,
            2.0,
            &provider,
            &Belief::uniform(2),
            10_000,
        )
        .unwrap();
        // Hand Bayes: per theta, sum over intact/erased first memory.
        let init = Belief::uniform(2);
        let mut expected: Vec<f64> = grid
            .iter()
            .map(|theta| {
                decay
                    .outcomes(&InternalMemory::empty(), 0, None, MemoryBound::new(*theta))
                    .into_iter()
                    .map(|(mem, p)| {
                        let b = biased_belief(&model, &mem, &init).unwrap();
                        p * provider.action_probs(*theta, &b, 0, 2.0)[0]
                    })
                    .sum::<f64>()
            })
            .collect();
        let z: f64 = expected.iter().sum();
        for e in expected.iter_mut() {
            *e /= z;
        }
        for (a, b) in post.theta_marginal.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_posterior_theta_zero_is_point_mass_on_truth() {
        let model = micro_model();
        let decay = micro_decay();
        let ev = EvidenceStream {
            obs: vec![0, 1, 0],
            acts: vec![0, 1, 0],
        };
        let post = exact_joint_posterior(
            &model,
            &decay,
            &[0.0],
            &ev,
            2.0,
            &MicroProvider,
            &Belief::uniform(2),
            10_000,
        )
        .unwrap();
        assert_eq!(post.joint[0].len(), 1);
        assert_eq!(post.joint[0][0].0, vec![0, 1, 0]);
        assert!((post.theta_marginal[0] - 1.0).abs() < 1e-12);
    }

    /// Second, independently structured enumeration: recurse over full
    /// corruption masks of the whole history instead of prefix merging.
    fn brute_force_theta_marginal(
        model: &DiscretePomdp,
        decay: &ObjectDecay,
        grid: &[f64],
        ev: &EvidenceStream,
        tau: f64,
        provider: &impl PolicyProvider,
    ) -> Vec<f64> {
        let init = Belief::uniform(model.n_states);
        let t = ev.obs.len();
        let mut out = Vec::new();
        for theta in grid {
            let mut total = 0.0;
            // Corruption time for entry k is any step in k..t or never.
            // Enumerate erase-step assignment per entry: entry k erased at
            // step d (k<=d<t) has prob (1-th)^(d-k)·th; never: (1-th)^(t-1-k)
            // ... but the action likelihoods depend on the memory state at
            // each step, so walk all per-step erasure pattern sequences.
            // Represent pattern as the set of currently-erased entries.
            fn recurse(
                model: &DiscretePomdp,
                decay: &ObjectDecay,
                provider: &impl PolicyProvider,
                ev: &EvidenceStream,
                theta: f64,
                tau: f64,
                init: &Belief,
                k: usize,
                erased: &mut Vec<bool>,
                t: usize,
                weight: f64,
                total: &mut f64,
            ) {
                // At the start of call k the memory holds entries 0..=k with
                // erasure flags; score action k, then branch on next decay.
                let entries = (0..=k)
                    .map(|i| crate::memory::MemoryEntry {
                        obs: if erased[i] {
                            decay.erase_target(ev.obs[i]).unwrap()
                        } else {
                            ev.obs[i]
                        },
                        act: if i == 0 { None } else { Some(ev.acts[i - 1]) },
                    })
                    .collect();
                let mem = InternalMemory::from_entries(entries);
                let like = match biased_belief(model, &mem, init) {
                    Ok(b) => provider.action_probs(theta, &b, k, tau)[ev.acts[k]],
                    Err(_) => 0.0,
                };
                let weight = weight * like;
                if weight == 0.0 {
                    return;
                }
                if k + 1 == t {
                    *total += weight;
                    return;
                }
                // Branch over the decay outcome of every live entry plus
                // the incoming one for step k+1.
                let live: Vec<usize> = (0..=k + 1)
                    .filter(|i| {
                        if *i == k + 1 {
                            decay.erasable(ev.obs[*i])
                        } else {
                            !erased[*i] && decay.erasable(ev.obs[*i])
                        }
                    })
                    .collect();
                for mask in 0..(1u32 << live.len()) {
                    let mut p = 1.0;
                    for (bit, idx) in live.iter().enumerate() {
                        if mask >> bit & 1 == 1 {
                            erased[*idx] = true;
                            p *= theta;
                        } else {
                            p *= 1.0 - theta;
                        }
                    }
                    if p > 0.0 {
                        recurse(
                            model, decay, provider, ev, theta, tau, init,
                            k + 1, erased, t, weight * p, total,
                        );
                    }
                    // Undo this mask's erasures (entries erased by earlier
                    // recursion levels stay erased).
                    for (bit, idx) in live.iter().enumerate() {
                        if mask >> bit & 1 == 1 {
                            erased[*idx] = false;
                        }
                    }
                }
            }
            // Initial decay branch on entry 0.
            if decay.erasable(ev.obs[0]) {
                for (flag, p) in [(false, 1.0 - theta), (true, *theta)] {
                    if p == 0.0 {
                        continue;
                    }
                    let mut erased = vec![false; t];
                    erased[0] = flag;
                    recurse(
                        model, decay, provider, ev, *theta, tau, &init, 0, &mut erased, t, p,
                        &mut total,
                    );
                }
            } else {
                let mut erased = vec![false; t];
                recurse(
                    model, decay, provider, ev, *theta, tau, &init, 0, &mut erased, t, 1.0,
                    &mut total,
                );
            }
            out.push(total / grid.len() as f64);
        }
        let z: f64 = out.iter().sum();
        out.iter().map(|x| x / z).collect()
    }

    #[test]
    fn exact_posterior_matches_independent_enumeration() {
        let model = micro_model();
        let decay = micro_decay();
        let grid = [0.0, 0.4, 0.9];
        let ev = EvidenceStream {
            obs: vec![0, 1, 0],
            acts: vec![0, 1, 1],
        };
        let post = exact_joint_posterior(
            &model,
            &decay,
            &grid,
            &ev,
            2.0,
            &MicroProvider,
            &Belief::uniform(2),
            100_000,
        )
        .unwrap();
        let brute = brute_force_theta_marginal(&model, &decay, &grid, &ev, 2.0, &MicroProvider);
        let total: f64 = post.theta_marginal.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (a, b) in post.theta_marginal.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn npf_tracks_exact_posterior_on_micro_instance() {
        let model = micro_model();
        let decay = micro_decay();
        let provider = MicroProvider;
        let grid = [0.0, 0.5, 1.0];
        let tau = 2.0;
        let mut tv_sum = 0.0;
        let n_seeds = 5;
        for seed in 0..n_seeds {
            let mut rng = rng_stream(100 + seed, &[1]);
            let ev = simulate_user_history(
                &model,
                &decay,
                &provider,
                0.5,
                tau,
                &Belief::uniform(2),
                0,
                4,
                &mut rng,
            );
            let exact = exact_joint_posterior(
                &model,
                &decay,
                &grid,
                &ev,
                tau,
                &provider,
                &Belief::uniform(2),
                1_000_000,
            )
            .unwrap();
            let mut filter = NpfFilter::new(
                &model,
                &decay,
                Belief::uniform(2),
                &provider,
                &grid,
                NpfConfig {
                    n_inner: 2000,
                    tau,
                    resample: true,
                    parallel: true,
                    seed: 7 + seed,
                },
            );
            let summaries = run_npf(&mut filter, &ev).unwrap();
            tv_sum += tv_distance(&summaries.last().unwrap().weights, &exact.theta_marginal);
        }
        let mean_tv = tv_sum / n_seeds as f64;
        assert!(mean_tv < 0.05, "mean TV {mean_tv}");
    }

    #[test]
    fn episode_reset_preserves_outer_weights() {
        let model = micro_model();
        let decay = micro_decay();
        let provider = MicroProvider;
        let grid = [0.0, 0.5, 1.0];
        let mut filter = NpfFilter::new(
            &model,
            &decay,
            Belief::uniform(2),
            &provider,
            &grid,
            NpfConfig {
                n_inner: 50,
                tau: 2.0,
                resample: true,
                parallel: true,
                seed: 3,
            },
        );
        filter.npf_update(0, None, 0).unwrap();
        filter.npf_update(1, Some(0), 1).unwrap();
        let before = filter.ps.outer_weights();
        filter.episode_reset();
        assert_eq!(filter.ps.outer_weights(), before);
        assert_eq!(filter.ps.episode, 1);
        for o in &filter.ps.outer {
            assert!(o.inner.iter().all(|p| p.memory.is_empty()));
        }
        assert!(filter.ps.check_invariants());
    }
}
