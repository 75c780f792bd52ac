//! Nested-filter throughput: parallel vs sequential inner loops, and
//! scaling in the number of inner particles.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use crlab_core::npf::{run_npf, simulate_user_history, EvidenceStream, NpfConfig, NpfFilter};
use crlab_core::oracle::LinearProvider;
use crlab_core::pomdp::Belief;
use crlab_core::rng::stream;
use crlab_core::tmaze::{build_tmaze, Tmaze, TmazeConfig, N_ACTIONS};

struct Fixture {
    maze: Tmaze,
    provider: LinearProvider,
    grid: Vec<f64>,
    init: Belief,
    ev: EvidenceStream,
}

fn fixture(horizon: usize) -> Fixture {
    let maze = build_tmaze(&TmazeConfig::default()).unwrap();
    let n_states = maze.pomdp.n_states;
    let coef: Vec<Vec<f64>> = (0..N_ACTIONS)
        .map(|a| {
            (0..n_states)
                .map(|s| (((a * 31 + s * 7) % 13) as f64 - 6.0) / 6.0)
                .collect()
        })
        .collect();
    let provider = LinearProvider { coef };
    let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let init = maze.initial_belief();
    let mut rng = stream(42, &[0x62656e63]);
    let decay = maze.decay_model();
    let start = maze.state_index(maze.start_state(0));
    let ev = simulate_user_history(
        &maze.pomdp,
        &decay,
        &provider,
        0.5,
        3.0,
        &init,
        start,
        horizon,
        &mut rng,
    );
    Fixture {
        maze,
        provider,
        grid,
        init,
        ev,
    }
}

fn run(fx: &Fixture, n_inner: usize, parallel: bool) -> f64 {
    let decay = fx.maze.decay_model();
    let mut filter = NpfFilter::new(
        &fx.maze.pomdp,
        &decay,
        fx.init.clone(),
        &fx.provider,
        &fx.grid,
        NpfConfig {
            n_inner,
            tau: 3.0,
            resample: true,
            parallel,
            seed: 42,
        },
    );
    let summaries = run_npf(&mut filter, &fx.ev).unwrap();
    summaries.last().unwrap().mean
}

fn bench_parallel_vs_sequential(c: &mut Criterion) {
    let fx = fixture(12);
    let mut g = c.benchmark_group("npf_12_steps_n200");
    g.sample_size(20);
    for (label, parallel) in [("parallel", true), ("sequential", false)] {
        g.bench_function(label, |b| b.iter(|| black_box(run(&fx, 200, parallel))));
    }
    g.finish();
}

fn bench_inner_scaling(c: &mut Criterion) {
    let fx = fixture(12);
    let mut g = c.benchmark_group("npf_inner_scaling");
    g.sample_size(10);
    for n_inner in [100usize, 200, 400, 800] {
        g.bench_with_input(BenchmarkId::from_parameter(n_inner), &n_inner, |b, &n| {
            b.iter(|| black_box(run(&fx, n, true)))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_parallel_vs_sequential, bench_inner_scaling);
criterion_main!(benches);
