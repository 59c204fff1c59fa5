use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vstream::agent::{DdpgAgent, Transition};
use vstream::env;
use vstream::oracle::{self, Fixture};
use vstream::par::Execution;
use vstream::SimConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn batch(cfg: &SimConfig, n: usize) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut v = |len: usize| (0..len).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    (0..n)
        .map(|_| Transition {
            s: v(cfg.state_dim()),
            a: v(cfg.action_dim()),
            r: 0.5,
            s_next: v(cfg.state_dim()),
        })
        .collect()
}

fn update_cycle(c: &mut Criterion) {
    let cfg = SimConfig::desk();
    let data = batch(&cfg, cfg.batch_size);
    let refs: Vec<&Transition> = data.iter().collect();
    let mut group = c.benchmark_group("ddpg_update_cycle");
    for (name, exec) in MODES {
        let mut agent = DdpgAgent::new(&cfg, 0).unwrap();
        agent.exec = exec;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| agent.update_cycle(&refs).unwrap())
        });
    }
    group.finish();
}

fn oracle_monte_carlo(c: &mut Criterion) {
    let fixture = Fixture::l2();
    let mut group = c.benchmark_group("oracle_validation_20k");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| oracle::validate_empirical(&fixture, 20_000, env::deliver_high_quality_first, 3, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, update_cycle, oracle_monte_carlo);
criterion_main!(benches);
