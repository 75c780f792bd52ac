//! Clipped policy-gradient learner (PPO-style) for discrete actions,
//! shared by the per-theta user policies and the assistance type-policy.
//! Separate policy and value networks, generalized advantage estimation,
//! entropy bonus, full-batch epochs over shuffled minibatches.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, Grads, Mlp};
use crate::pomdp::sample_categorical;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub lr: f64,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub hidden: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            clip: 0.2,
            gamma: 1.0,
            gae_lambda: 0.95,
            entropy_coef: 0.02,
            epochs: 4,
            minibatch: 64,
            hidden: 32,
        }
    }
}

/// One environment step as stored in the rollout buffer. `done` marks the
/// last step of an episode (value bootstrap is zero there). `vobs` is the
/// critic's view of the step — it may carry extra training-time context
/// (e.g. the episode clock) that the deployed policy must not see.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub vobs: Vec<f64>,
    pub act: usize,
    pub reward: f64,
    pub logp: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub policy: Mlp,
    pub value: Mlp,
    opt_policy: Adam,
    opt_value: Adam,
    pub cfg: PpoConfig,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

impl PpoLearner {
    /// `value_input_dim` may exceed `input_dim`: the critic is allowed
    /// privileged training-time features (asymmetric actor-critic).
    pub fn new<R: Rng>(
        input_dim: usize,
        value_input_dim: usize,
        n_actions: usize,
        cfg: PpoConfig,
        rng: &mut R,
    ) -> Self {
        let policy = Mlp::new(&[input_dim, cfg.hidden, cfg.hidden, n_actions], rng);
        let value = Mlp::new(&[value_input_dim, cfg.hidden, cfg.hidden, 1], rng);
        let opt_policy = Adam::new(&policy, cfg.lr);
        let opt_value = Adam::new(&value, cfg.lr);
        Self {
            policy,
            value,
            opt_policy,
            opt_value,
            cfg,
        }
    }

    pub fn logits(&self, obs: &[f64]) -> Vec<f64> {
        self.policy.forward(obs)
    }

    pub fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        softmax(&self.logits(obs))
    }

    /// Sample (action, log-prob, state value) for rollout collection;
    /// `vobs` is the critic's (possibly richer) view of the same step.
    pub fn sample_action<R: Rng>(&self, obs: &[f64], vobs: &[f64], rng: &mut R) -> (usize, f64, f64) {
        let probs = self.action_probs(obs);
        let act = sample_categorical(&probs, rng);
        let value = self.value.forward(vobs)[0];
        (act, probs[act].ln(), value)
    }

    /// One PPO update on a buffer of whole episodes (every episode in the
    /// buffer must end with a `done` transition).
    pub fn update<R: Rng>(&mut self, buffer: &[Transition], rng: &mut R) -> Result<PpoStats, TrainError> {
        assert!(!buffer.is_empty());
        assert!(buffer.last().unwrap().done, "buffer must end on an episode boundary");
        let (advantages, returns) = self.gae(buffer);
        let adv = normalize(&advantages);

        let mut order: Vec<usize> = (0..buffer.len()).collect();
        let mut stats = PpoStats::default();
        let mut n_batches = 0usize;
        let mut pgrads = Grads::zeros_like(&self.policy);
        let mut vgrads = Grads::zeros_like(&self.value);
        for _ in 0..self.cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                pgrads.reset();
                vgrads.reset();
                let mut batch_stats = PpoStats::default();
                for &i in chunk {
                    let tr = &buffer[i];
                    let acts = self.policy.forward_full(&tr.obs);
                    let logits = acts.last().unwrap();
                    let probs = softmax(logits);
                    let logp_new = probs[tr.act].ln();
                    let ratio = (logp_new - tr.logp).exp();
                    let a = adv[i];
                    // min(r·A, clip(r)·A): gradient flows only while the
                    // unclipped branch is active.
                    let unclipped_active = if a >= 0.0 {
                        ratio <= 1.0 + self.cfg.clip
                    } else {
                        ratio >= 1.0 - self.cfg.clip
                    };
                    let entropy: f64 = -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
                    // dL/dlogits for L = -surrogate - c_H·H.
                    let mut dlogits = vec![0.0; probs.len()];
                    if unclipped_active {
                        let coef = -a * ratio;
                        for (k, dl) in dlogits.iter_mut().enumerate() {
                            let indicator = if k == tr.act { 1.0 } else { 0.0 };
                            *dl += coef * (indicator - probs[k]);
                        }
                    }
                    for (k, dl) in dlogits.iter_mut().enumerate() {
                        let p = probs[k].max(1e-12);
                        *dl -= self.cfg.entropy_coef * (-p * (p.ln() + entropy));
                    }
                    self.policy.backward(&acts, &dlogits, &mut pgrads);

                    let vacts = self.value.forward_full(&tr.vobs);
                    let v = vacts.last().unwrap()[0];
                    self.value.backward(&vacts, &[v - returns[i]], &mut vgrads);

                    let clipped = ratio.clamp(1.0 - self.cfg.clip, 1.0 + self.cfg.clip);
                    batch_stats.policy_loss += -(ratio * a).min(clipped * a);
                    batch_stats.value_loss += 0.5 * (v - returns[i]).powi(2);
                    batch_stats.entropy += entropy;
                }
                let inv = 1.0 / chunk.len() as f64;
                pgrads.scale(inv);
                vgrads.scale(inv);
                if !pgrads.is_finite() || !vgrads.is_finite() {
                    return Err(TrainError::TrainingDiverged("non-finite gradients".into()));
                }
                self.opt_policy.step(&mut self.policy, &pgrads);
                self.opt_value.step(&mut self.value, &vgrads);
                stats.policy_loss += batch_stats.policy_loss * inv;
                stats.value_loss += batch_stats.value_loss * inv;
                stats.entropy += batch_stats.entropy * inv;
                n_batches += 1;
            }
        }
        let inv = 1.0 / n_batches as f64;
        stats.policy_loss *= inv;
        stats.value_loss *= inv;
        stats.entropy *= inv;
        if !stats.policy_loss.is_finite() || !stats.value_loss.is_finite() {
            return Err(TrainError::TrainingDiverged("non-finite loss".into()));
        }
        Ok(stats)
    }

    /// GAE over a buffer of concatenated episodes.
    fn gae(&self, buffer: &[Transition]) -> (Vec<f64>, Vec<f64>) {
        let n = buffer.len();
        let mut advantages = vec![0.0; n];
        let mut returns = vec![0.0; n];
        let mut next_value = 0.0;
        let mut next_adv = 0.0;
        for i in (0..n).rev() {
            let tr = &buffer[i];
            if tr.done {
                next_value = 0.0;
                next_adv = 0.0;
            }
            let delta = tr.reward + self.cfg.gamma * next_value - tr.value;
            next_adv = delta + self.cfg.gamma * self.cfg.gae_lambda * next_adv;
            advantages[i] = next_adv;
            returns[i] = advantages[i] + tr.value;
            next_value = tr.value;
        }
        (advantages, returns)
    }
}

fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    xs.iter().map(|x| (x - mean) / sd).collect()
}
