use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use endorse_core::{estimate_probability, Execution, Organization, Policy, SimConfig};

fn wide_policy(n: usize) -> Policy {
    let orgs = (0..n)
        .map(|i| {
            Organization::new(
                format!("org{i}"),
                1 + (i as u64 % 4),
                0.02 + 0.01 * (i % 7) as f64,
            )
            .unwrap()
        })
        .collect::<Vec<_>>();
    let total: u64 = orgs.iter().map(|o| o.weight()).sum();
    Policy::new(orgs, total * 2 / 3, 0.95).unwrap()
}

fn bench_estimate(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_probability");
    group.sample_size(20);
    for &(orgs, samples) in &[(3usize, 10_000u64), (3, 1_000_000), (40, 200_000)] {
        let policy = wide_policy(orgs);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let cfg = SimConfig {
                samples,
                batch_size: 4096,
                execution: exec,
                ..SimConfig::default()
            };
            let id = BenchmarkId::new(format!("{exec:?}"), format!("{orgs}orgs/{samples}"));
            group.bench_with_input(id, &cfg, |b, cfg| {
                b.iter(|| estimate_probability(&policy, cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_estimate);
criterion_main!(benches);
