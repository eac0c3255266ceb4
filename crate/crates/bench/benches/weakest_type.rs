use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mechlab_core::geometry::DenseOracle;
use mechlab_core::oracles::random_feasible_polytope;
use mechlab_core::{make_environment, weakest_type_cg, weakest_type_lp, EnvKind, GeneratorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lp_vs_constraint_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("weakest_type");
    for items in [2, 3, 4] {
        let kind = EnvKind::CombinatorialAuction { bidders: 2, items };
        let (_, profile) = make_environment(&kind, 11, &GeneratorConfig::default()).unwrap();
        let dim = profile.num_allocations();
        let polytope = random_feasible_polytope(&mut ChaCha8Rng::seed_from_u64(5), dim, 4);
        let oracle = DenseOracle::for_agent(&profile, 0).unwrap();
        group.bench_with_input(BenchmarkId::new("lp", dim), &dim, |b, _| {
            b.iter(|| weakest_type_lp(black_box(&polytope), &profile, 0).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("constraint_generation", dim),
            &dim,
            |b, _| b.iter(|| weakest_type_cg(black_box(&polytope), &profile, 0, &oracle).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, lp_vs_constraint_generation);
criterion_main!(benches);
