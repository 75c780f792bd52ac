//! Laboratory for modeling memory-bounded agents in tabular POMDPs.
//!
//! The crate has three layers:
//!
//! * environment and agent primitives: [`pomdp`] (exact filtering, softmax
//!   action selection), [`tmaze`] (the T-maze gridworld), [`memory`]
//!   (decaying internal memory and the biased belief it induces), and
//!   [`agent`] (per-decay-rate policies trained with a small clipped
//!   policy-gradient trainer in [`ppo`]);
//! * online inference: [`npf`], a nested particle filter that jointly tracks
//!   a user's latent memory-decay rate and their corrupted memory from
//!   passively observed actions, together with an exact enumeration oracle
//!   for micro-sized models;
//! * assistance: [`assist`], an assistant POMDP whose policy decides when to
//!   stay quiet, hint an action, or refresh a forgotten memory entry.
//!
//! Everything is deterministic given an explicit seed. With the default
//! `parallel` feature the particle loops run on rayon; results are
//! bit-identical to the sequential fallback because reductions happen in
//! particle-index order.

pub mod agent;
pub mod assist;
pub mod memory;
pub mod nn;
pub mod npf;
pub mod oracle;
pub mod pomdp;
pub mod ppo;
pub mod rng;
pub mod tmaze;

pub use pomdp::{
    belief_update, policy_entropy, softmax_policy, ActionDistribution, Belief, DiscretePomdp,
    PomdpError,
};
