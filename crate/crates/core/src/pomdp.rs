//! Tabular POMDP model, exact Bayesian filtering, and softmax action
//! selection. All probability tables are dense; models are immutable after
//! construction and safe to share across threads.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for probability-row normalization checks.
pub const PROB_TOL: f64 = 1e-9;

/// Current on-disk schema version for serialized models.
pub const POMDP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PomdpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("observation has zero probability under the prior (inconsistent evidence)")]
    InconsistentEvidence,
    #[error("schema version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A finite POMDP with dense transition/observation/reward tables.
///
/// Observation indices may be *coarse*: a coarse observation stands for a set
/// of base observations and its likelihood is the sum of theirs. The
/// environment itself only ever emits base observations (rows of the
/// observation table sum to one over base indices); coarse indices exist so
/// that a degraded memory of an observation can still be conditioned on
/// without contradiction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscretePomdp {
    schema_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_observations: usize,
    /// T(s'|s,a), laid out as `[s][a][s']`.
    transition: Vec<f64>,
    /// O(o|s), laid out as `[s][o]`.
    observation: Vec<f64>,
    /// R(s,a), laid out as `[s][a]`.
    reward: Vec<f64>,
    pub discount: f64,
    pub max_steps: usize,
    /// For each observation index, the base indices it aggregates.
    /// Base observations map to the singleton `[o]`.
    coarse: Vec<Vec<usize>>,
    /// Sparse transition rows `[(s', p)]` per (s, a), rebuilt on load.
    #[serde(skip)]
    transition_rows: Vec<Vec<(usize, f64)>>,
}

impl DiscretePomdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_observations: usize,
        transition: Vec<f64>,
        observation: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        max_steps: usize,
        coarse: Option<Vec<Vec<usize>>>,
    ) -> Result<Self, PomdpError> {
        let coarse = coarse
            .unwrap_or_else(|| (0..n_observations).map(|o| vec![o]).collect());
        let mut model = Self {
            schema_version: POMDP_SCHEMA_VERSION,
            n_states,
            n_actions,
            n_observations,
            transition,
            observation,
            reward,
            discount,
            max_steps,
            coarse,
            transition_rows: Vec::new(),
        };
        model.validate()?;
        model.rebuild_cache();
        Ok(model)
    }

    fn validate(&self) -> Result<(), PomdpError> {
        let (s, a, o) = (self.n_states, self.n_actions, self.n_observations);
        if s == 0 || a == 0 || o == 0 {
            return Err(PomdpError::InvalidModel("empty index set".into()));
        }
        if self.transition.len() != s * a * s {
            return Err(PomdpError::InvalidModel("transition table size".into()));
        }
        if self.observation.len() != s * o {
            return Err(PomdpError::InvalidModel("observation table size".into()));
        }
        if self.reward.len() != s * a {
            return Err(PomdpError::InvalidModel("reward table size".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(PomdpError::InvalidModel("discount out of (0, 1]".into()));
        }
        if self.max_steps == 0 {
            return Err(PomdpError::InvalidModel("max_steps must be positive".into()));
        }
        if self.coarse.len() != o {
            return Err(PomdpError::InvalidModel("coarse map size".into()));
        }
        for p in self.transition.iter().chain(self.observation.iter()) {
            if !(*p >= 0.0 && *p <= 1.0 + PROB_TOL) {
                return Err(PomdpError::InvalidModel("probability out of [0,1]".into()));
            }
        }
        for si in 0..s {
            for ai in 0..a {
                let row = &self.transition[(si * a + ai) * s..(si * a + ai + 1) * s];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(PomdpError::InvalidModel(format!(
                        "T row (s={si}, a={ai}) sums to {sum}"
                    )));
                }
            }
            let sum: f64 = self.observation[si * o..(si + 1) * o].iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(PomdpError::InvalidModel(format!(
                    "O row (s={si}) sums to {sum}"
                )));
            }
        }
        for (oi, base) in self.coarse.iter().enumerate() {
            if base.is_empty() || base.iter().any(|b| *b >= o) {
                return Err(PomdpError::InvalidModel(format!(
                    "coarse map for observation {oi} is invalid"
                )));
            }
        }
        Ok(())
    }

    fn rebuild_cache(&mut self) {
        let (s, a) = (self.n_states, self.n_actions);
        self.transition_rows = (0..s * a)
            .map(|idx| {
                self.transition[idx * s..(idx + 1) * s]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(sp, p)| (sp, *p))
                    .collect()
            })
            .collect();
    }

    #[inline]
    pub fn transition_prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// Nonzero successors of (s, a) as `(s', p)` pairs.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transition_rows[s * self.n_actions + a]
    }

    #[inline]
    pub fn observation_prob(&self, o: usize, s: usize) -> f64 {
        self.observation[s * self.n_observations + o]
    }

    /// Likelihood of observation `o` in state `s`, resolving coarse indices
    /// to the sum over their base observations.
    #[inline]
    pub fn obs_likelihood(&self, o: usize, s: usize) -> f64 {
        let base = &self.coarse[o];
        if base.len() == 1 && base[0] == o {
            self.observation_prob(o, s)
        } else {
            base.iter().map(|b| self.observation_prob(*b, s)).sum()
        }
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// True if `o` aggregates more than itself.
    pub fn is_coarse(&self, o: usize) -> bool {
        self.coarse[o].len() != 1 || self.coarse[o][0] != o
    }

    pub fn coarse_base(&self, o: usize) -> &[usize] {
        &self.coarse[o]
    }

    pub fn to_json(&self) -> Result<String, PomdpError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PomdpError> {
        let mut model: DiscretePomdp = serde_json::from_str(text)?;
        if model.schema_version != POMDP_SCHEMA_VERSION {
            return Err(PomdpError::VersionMismatch {
                found: model.schema_version,
                expected: POMDP_SCHEMA_VERSION,
            });
        }
        model.validate()?;
        model.rebuild_cache();
        Ok(model)
    }

    pub fn sample_transition<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_indexed(self.successors(s, a).iter().copied(), rng)
    }

    pub fn sample_observation<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        let row = &self.observation[s * self.n_observations..(s + 1) * self.n_observations];
        sample_categorical(row, rng)
    }
}

/// A normalized distribution over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self, PomdpError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROB_TOL {
            return Err(PomdpError::InvalidInput("not a probability vector".into()));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn delta(n: usize, s: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[s] = 1.0;
        Self(probs)
    }

    /// Uniform over a support set.
    pub fn uniform_over(n: usize, support: &[usize]) -> Self {
        let mut probs = vec![0.0; n];
        let p = 1.0 / support.len() as f64;
        for s in support {
            probs[*s] = p;
        }
        Self(probs)
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Marginal probability mass of a state subset.
    pub fn mass(&self, states: impl IntoIterator<Item = usize>) -> f64 {
        states.into_iter().map(|s| self.0[s]).sum()
    }
}

/// A normalized distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, PomdpError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PROB_TOL {
            return Err(PomdpError::InvalidInput("not a probability vector".into()));
        }
        Ok(Self(probs))
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn prob(&self, a: usize) -> f64 {
        self.0[a]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.0, rng)
    }

    /// Argmax with ties broken toward the smaller index.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// One step of exact Bayesian filtering:
/// b'(s') ∝ O(o|s') Σ_s T(s'|s,a) b(s).
///
/// Returns `InconsistentEvidence` when the observation has zero probability
/// under the predicted belief; callers decide recovery.
pub fn belief_update(
    model: &DiscretePomdp,
    prior: &Belief,
    action: usize,
    observation: usize,
) -> Result<Belief, PomdpError> {
    if action >= model.n_actions || observation >= model.n_observations {
        return Err(PomdpError::InvalidInput("index out of range".into()));
    }
    if prior.len() != model.n_states {
        return Err(PomdpError::InvalidInput("belief dimension mismatch".into()));
    }
    let mut predicted = vec![0.0; model.n_states];
    for (s, p) in prior.probs().iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        for (s_next, t) in model.successors(s, action) {
            predicted[*s_next] += t * p;
        }
    }
    let mut posterior = predicted;
    let mut norm = 0.0;
    for (s_next, value) in posterior.iter_mut().enumerate() {
        *value *= model.obs_likelihood(observation, s_next);
        norm += *value;
    }
    if norm <= 0.0 {
        return Err(PomdpError::InconsistentEvidence);
    }
    for value in posterior.iter_mut() {
        *value /= norm;
    }
    Ok(Belief(posterior))
}

/// Condition a belief on an observation without a transition step
/// (used for the first entry of a remembered history).
pub fn belief_observe(
    model: &DiscretePomdp,
    prior: &Belief,
    observation: usize,
) -> Result<Belief, PomdpError> {
    let mut posterior: Vec<f64> = prior
        .probs()
        .iter()
        .enumerate()
        .map(|(s, p)| p * model.obs_likelihood(observation, s))
        .collect();
    let norm: f64 = posterior.iter().sum();
    if norm <= 0.0 {
        return Err(PomdpError::InconsistentEvidence);
    }
    for value in posterior.iter_mut() {
        *value /= norm;
    }
    Ok(Belief(posterior))
}

/// Softmax over q-values with inverse temperature `tau`:
/// p(a) = exp(τ q(a)) / Σ exp(τ q(a')), computed with max subtraction.
pub fn softmax_policy(q_values: &[f64], tau: f64) -> Result<ActionDistribution, PomdpError> {
    if q_values.is_empty() || q_values.iter().any(|q| !q.is_finite()) {
        return Err(PomdpError::InvalidInput("non-finite q value".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(PomdpError::InvalidInput("tau must be positive".into()));
    }
    let max = q_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = q_values.iter().map(|q| (tau * (q - max)).exp()).collect();
    let norm: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= norm;
    }
    Ok(ActionDistribution(probs))
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
pub fn policy_entropy(dist: &ActionDistribution) -> f64 {
    -dist
        .probs()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Draw an index from an unnormalized-safe categorical given as a dense row.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let total: f64 = probs.iter().sum();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p / total;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_indexed<R: Rng>(pairs: impl Iterator<Item = (usize, f64)> + Clone, rng: &mut R) -> usize {
    let total: f64 = pairs.clone().map(|(_, p)| p).sum();
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in pairs {
        acc += p / total;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
