//! Sequential vs rayon-backed maps over the crate's data-parallel workloads.
//! On a single core the two should match; the gap shows up with more cores.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dnmd_core::autoenc::{collect_observations, Autoencoder};
use dnmd_core::envs::{DiscreteEnv, MultiAgentEnv, PursuitConfig, PursuitEnv, PURSUIT_ACTIONS};
use dnmd_core::parallel;
use dnmd_core::rng;
use rand::Rng;

/// One random-policy pursuit window, the unit of work in evaluation.
fn episode(seed: &u64) -> usize {
    let mut env = PursuitEnv::new(PursuitConfig::small(), *seed).unwrap();
    let mut r = rng::seeded(*seed);
    let mut catches = 0;
    for _ in 0..200 {
        let a: Vec<usize> = (0..env.n_agents()).map(|_| r.random_range(0..PURSUIT_ACTIONS)).collect();
        let s = env.step(&a).unwrap();
        catches += s.info.captures;
        if s.terminal {
            env.reset();
        }
    }
    assert_eq!(env.n_actions(), PURSUIT_ACTIONS);
    catches
}

fn evaluation_episodes(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("evaluation_episodes");
    g.bench_function(BenchmarkId::new("sequential", seeds.len()), |b| {
        b.iter(|| parallel::map_seq(black_box(&seeds), episode))
    });
    #[cfg(feature = "parallel")]
    g.bench_function(BenchmarkId::new("parallel", seeds.len()), |b| {
        b.iter(|| parallel::map_par(black_box(&seeds), episode))
    });
    g.finish();
}

fn autoencoder_chunks(c: &mut Criterion) {
    let data = collect_observations(&PursuitConfig::small(), 256, 1).unwrap();
    let ae = Autoencoder::new(147, 2).unwrap();
    let chunks: Vec<&[Vec<f64>]> = data.chunks(64).collect();
    let mse = |chunk: &&[Vec<f64>]| ae.mse(chunk).unwrap();
    let mut g = c.benchmark_group("autoencoder_chunks");
    g.bench_function("sequential", |b| b.iter(|| parallel::map_seq(black_box(&chunks), mse)));
    #[cfg(feature = "parallel")]
    g.bench_function("parallel", |b| b.iter(|| parallel::map_par(black_box(&chunks), mse)));
    g.finish();
}

criterion_group!(benches, evaluation_episodes, autoencoder_chunks);
criterion_main!(benches);
