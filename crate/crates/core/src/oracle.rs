//! Consistency suite: the nested filter against the exact enumerated
//! posterior on micro models small enough to brute-force. Used by the
//! `oracle-check` command and the acceptance gate.

use serde::Serialize;

use crate::memory::ObjectDecay;
use crate::npf::{
    exact_joint_posterior, run_npf, simulate_user_history, tv_distance, NpfConfig, NpfError,
    NpfFilter, PolicyProvider,
};
use crate::pomdp::{softmax_policy, Belief, DiscretePomdp};
use crate::rng::stream;

/// Belief- and theta-sensitive softmax policy over linear action scores:
/// score(a) = sum_s coef[a][s] * b(s), sharpened toward action argmax by
/// theta. Deterministic, cheap, and informative about theta.
pub struct LinearProvider {
    pub coef: Vec<Vec<f64>>,
}

impl PolicyProvider for LinearProvider {
    fn action_probs(&self, theta: f64, belief: &Belief, _t: usize, tau: f64) -> Vec<f64> {
        let q: Vec<f64> = self
            .coef
            .iter()
            .map(|row| {
                let score: f64 = row.iter().zip(belief.probs()).map(|(c, b)| c * b).sum();
                score * (1.0 + theta)
            })
            .collect();
        softmax_policy(&q, tau).expect("finite scores").probs().to_vec()
    }
}

pub struct MicroCase {
    pub name: &'static str,
    pub model: DiscretePomdp,
    pub decay: ObjectDecay,
    pub provider: LinearProvider,
    pub theta_grid: Vec<f64>,
    pub theta_true: f64,
    pub tau: f64,
    pub initial_state: usize,
}

/// Three micro instances: |S| <= 4, |Omega| <= 4, |Theta| = 3.
pub fn micro_suite() -> Vec<MicroCase> {
    let mut cases = Vec::new();
    // Two-state chain, two base observations plus one erased aggregate.
    cases.push(MicroCase {
        name: "chain2",
        model: DiscretePomdp::new(
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
        .unwrap(),
        decay: ObjectDecay::new(vec![Some(2), Some(2), None]),
        provider: LinearProvider {
            coef: vec![vec![1.0, -0.5], vec![-0.5, 1.0]],
        },
        theta_grid: vec![0.0, 0.5, 1.0],
        theta_true: 0.5,
        tau: 2.0,
        initial_state: 0,
    });
    // Three-state ring where only observation 1 decays.
    cases.push(MicroCase {
        name: "ring3",
        model: DiscretePomdp::new(
            3,
            2,
            4,
            vec![
                0.7, 0.2, 0.1, 0.1, 0.8, 0.1, // s0
                0.1, 0.7, 0.2, 0.1, 0.1, 0.8, // s1
                0.2, 0.1, 0.7, 0.8, 0.1, 0.1, // s2
            ],
            vec![
                0.7, 0.2, 0.1, 0.0, //
                0.1, 0.8, 0.1, 0.0, //
                0.2, 0.1, 0.7, 0.0,
            ],
            vec![0.0; 6],
            1.0,
            20,
            Some(vec![vec![0], vec![1], vec![2], vec![0, 1, 2]]),
        )
        .unwrap(),
        decay: ObjectDecay::new(vec![None, Some(3), None, None]),
        provider: LinearProvider {
            coef: vec![vec![1.0, 0.0, -1.0], vec![-1.0, 0.5, 1.0]],
        },
        theta_grid: vec![0.1, 0.5, 0.9],
        theta_true: 0.9,
        tau: 2.5,
        initial_state: 1,
    });
    // Four states, three actions, two decaying observations.
    #[rustfmt::skip]
    let t4 = vec![
        // a0: drift right          a1: drift left           a2: stay-ish
        0.6,0.3,0.05,0.05,  0.8,0.1,0.05,0.05,  0.9,0.05,0.03,0.02, // s0
        0.1,0.6,0.25,0.05,  0.5,0.4,0.05,0.05,  0.05,0.85,0.05,0.05, // s1
        0.05,0.15,0.6,0.2,  0.05,0.5,0.4,0.05,  0.05,0.05,0.85,0.05, // s2
        0.05,0.05,0.2,0.7,  0.05,0.1,0.45,0.4,  0.02,0.03,0.05,0.9, // s3
    ];
    cases.push(MicroCase {
        name: "grid4",
        model: DiscretePomdp::new(
            4,
            3,
            4,
            t4,
            vec![
                0.8, 0.1, 0.1, 0.0, //
                0.1, 0.8, 0.1, 0.0, //
                0.1, 0.1, 0.8, 0.0, //
                0.3, 0.3, 0.4, 0.0,
            ],
            vec![0.0; 12],
            1.0,
            20,
            Some(vec![vec![0], vec![1], vec![2], vec![0, 1, 2]]),
        )
        .unwrap(),
        decay: ObjectDecay::new(vec![Some(3), None, Some(3), None]),
        provider: LinearProvider {
            coef: vec![
                vec![1.0, 0.5, -0.5, -1.0],
                vec![-1.0, -0.5, 0.5, 1.0],
                vec![0.2, -0.4, 0.6, -0.2],
            ],
        },
        theta_grid: vec![0.0, 0.4, 0.8],
        theta_true: 0.4,
        tau: 2.0,
        initial_state: 0,
    });
    cases
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub case: String,
    pub resample: bool,
    pub n_inner: usize,
    pub n_seeds: u64,
    pub horizon: usize,
    pub mean_tv: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Mean TV distance between the filter's theta marginal and the exact
/// posterior over `n_seeds` simulated histories of length `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn check_case(
    case: &MicroCase,
    n_inner: usize,
    n_seeds: u64,
    horizon: usize,
    budget: usize,
    resample: bool,
    threshold: f64,
    seed: u64,
) -> Result<OracleResult, NpfError> {
    let init = Belief::uniform(case.model.n_states);
    let mut tv_sum = 0.0;
    for s in 0..n_seeds {
        let mut rng = stream(seed, &[0x6f7263, s]);
        let ev = simulate_user_history(
            &case.model,
            &case.decay,
            &case.provider,
            case.theta_true,
            case.tau,
            &init,
            case.initial_state,
            horizon,
            &mut rng,
        );
        let exact = exact_joint_posterior(
            &case.model,
            &case.decay,
            &case.theta_grid,
            &ev,
            case.tau,
            &case.provider,
            &init,
            budget,
        )?;
        let mut filter = NpfFilter::new(
            &case.model,
            &case.decay,
            init.clone(),
            &case.provider,
            &case.theta_grid,
            NpfConfig {
                n_inner,
                tau: case.tau,
                resample,
                parallel: true,
                seed: crate::rng::stream_id(seed, &[0x6f7264, s]),
            },
        );
        let summaries = run_npf(&mut filter, &ev)?;
        tv_sum += tv_distance(&summaries.last().unwrap().weights, &exact.theta_marginal);
    }
    let mean_tv = tv_sum / n_seeds as f64;
    Ok(OracleResult {
        case: case.name.to_string(),
        resample,
        n_inner,
        n_seeds,
        horizon,
        mean_tv,
        threshold,
        pass: mean_tv < threshold,
    })
}
