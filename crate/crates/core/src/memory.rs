//! Internal memory of an episode's observation/action history and the
//! decay process that corrupts it.
//!
//! A memory holds one entry per true observation received this episode;
//! entry `i` stores the (possibly degraded) observation from step `i` and
//! the action that preceded it. Old entries may change retroactively:
//! every step, each entry that still shows the target object is
//! independently erased with probability theta. Actions never decay.
//!
//! The biased belief is exact Bayesian filtering applied to the remembered
//! sequence. Because corruption is retroactive, it is recomputed from
//! scratch each step (cost linear in the memory length).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pomdp::{belief_observe, belief_update, Belief, DiscretePomdp, PomdpError};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("corrupted memory contradicts the environment model")]
    CorruptedMemoryContradiction,
    #[error("malformed memory: {0}")]
    InvalidMemory(String),
    #[error(transparent)]
    Pomdp(PomdpError),
}

/// Per-step, per-entry probability that a remembered object sighting decays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryBound {
    pub theta: f64,
}

impl MemoryBound {
    pub fn new(theta: f64) -> Self {
        assert!((0.0..=1.0).contains(&theta), "theta must be in [0,1]");
        Self { theta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub obs: usize,
    /// Action taken before this observation; `None` for the first entry.
    pub act: Option<usize>,
}

/// An agent's remembered observation/action history for one episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalMemory {
    entries: Vec<MemoryEntry>,
}

impl InternalMemory {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<MemoryEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overwrite the remembered observation at entry `k` (memory refresh).
    pub fn set_obs(&mut self, k: usize, obs: usize) -> Result<(), MemoryError> {
        match self.entries.get_mut(k) {
            Some(entry) => {
                entry.obs = obs;
                Ok(())
            }
            None => Err(MemoryError::InvalidMemory(format!(
                "refresh index {k} out of range (len {})",
                self.entries.len()
            ))),
        }
    }
}

/// The decay family: each observation index either has an object-erased
/// counterpart (it shows the target object) or is immune.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectDecay {
    erase_to: Vec<Option<usize>>,
}

impl ObjectDecay {
    pub fn new(erase_to: Vec<Option<usize>>) -> Self {
        Self { erase_to }
    }

    #[inline]
    pub fn erasable(&self, obs: usize) -> bool {
        self.erase_to[obs].is_some()
    }

    pub fn erase_target(&self, obs: usize) -> Option<usize> {
        self.erase_to[obs]
    }

    /// Sample one memory transition: append the new pair, then erase each
    /// object-bearing entry (including the new one) with probability theta.
    pub fn step<R: Rng>(
        &self,
        prev: &InternalMemory,
        new_obs: usize,
        new_act: Option<usize>,
        bound: MemoryBound,
        rng: &mut R,
    ) -> InternalMemory {
        let mut next = prev.clone();
        next.entries.push(MemoryEntry {
            obs: new_obs,
            act: new_act,
        });
        if bound.theta > 0.0 {
            for entry in next.entries.iter_mut() {
                if let Some(erased) = self.erase_to[entry.obs] {
                    if bound.theta >= 1.0 || rng.random::<f64>() < bound.theta {
                        entry.obs = erased;
                    }
                }
            }
        }
        next
    }

    /// Exact enumeration of all decay outcomes of one step, as
    /// `(memory, probability)` pairs in a deterministic order.
    pub fn outcomes(
        &self,
        prev: &InternalMemory,
        new_obs: usize,
        new_act: Option<usize>,
        bound: MemoryBound,
    ) -> Vec<(InternalMemory, f64)> {
        let mut base = prev.clone();
        base.entries.push(MemoryEntry {
            obs: new_obs,
            act: new_act,
        });
        let erasable: Vec<usize> = base
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| self.erase_to[e.obs].is_some())
            .map(|(i, _)| i)
            .collect();
        let theta = bound.theta;
        let mut out = Vec::with_capacity(1 << erasable.len());
        for mask in 0..(1u64 << erasable.len()) {
            let mut mem = base.clone();
            let mut prob = 1.0;
            for (bit, idx) in erasable.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    mem.entries[*idx].obs = self.erase_to[mem.entries[*idx].obs].unwrap();
                    prob *= theta;
                } else {
                    prob *= 1.0 - theta;
                }
            }
            if prob > 0.0 {
                out.push((mem, prob));
            }
        }
        out
    }
}

/// Spec-level alias for [`ObjectDecay::step`].
pub fn memory_step<R: Rng>(
    decay: &ObjectDecay,
    prev: &InternalMemory,
    new_obs: usize,
    new_act: Option<usize>,
    bound: MemoryBound,
    rng: &mut R,
) -> InternalMemory {
    decay.step(prev, new_obs, new_act, bound, rng)
}

/// Filter `initial_belief` forward through the remembered sequence:
/// condition on the first entry's observation, then one Bayes step per
/// subsequent (action, observation) pair.
pub fn biased_belief(
    model: &DiscretePomdp,
    mem: &InternalMemory,
    initial_belief: &Belief,
) -> Result<Belief, MemoryError> {
    let mut entries = mem.entries().iter();
    let first = entries.next().ok_or_else(|| {
        MemoryError::InvalidMemory("cannot compute a belief from an empty memory".into())
    })?;
    let mut belief = map_evidence_err(belief_observe(model, initial_belief, first.obs))?;
    for entry in entries {
        let act = entry.act.ok_or_else(|| {
            MemoryError::InvalidMemory("non-initial entry missing its action".into())
        })?;
        belief = map_evidence_err(belief_update(model, &belief, act, entry.obs))?;
    }
    Ok(belief)
}

fn map_evidence_err(r: Result<Belief, PomdpError>) -> Result<Belief, MemoryError> {
    r.map_err(|e| match e {
        PomdpError::InconsistentEvidence => MemoryError::CorruptedMemoryContradiction,
        other => MemoryError::Pomdp(other),
    })
}
