use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mechlab_core::analysis::monte_carlo;
use mechlab_core::{
    make_environment, EnvKind, GeneratorConfig, MechanismSpec, Polytope, Predictor, TrialStreams,
    TuningParams,
};

fn setup() -> (mechlab_core::TypeProfile, MechanismSpec) {
    let kind = EnvKind::CombinatorialAuction {
        bidders: 3,
        items: 2,
    };
    let (_, profile) = make_environment(&kind, 3, &GeneratorConfig::default()).unwrap();
    // Each agent is predicted to value every allocation at most 30.
    let predictors = profile
        .agents()
        .iter()
        .map(|t| {
            Predictor::fixed(&Polytope::point(
                &t.as_slice().iter().map(|v| v.min(30.0)).collect::<Vec<_>>(),
            ))
        })
        .collect();
    let n = profile.num_agents();
    let spec = MechanismSpec::ZetaLambda {
        predictors,
        params: TuningParams::uniform(n, 1.0, 1.0),
    };
    (profile, spec)
}

fn single_run(c: &mut Criterion) {
    let (profile, spec) = setup();
    c.bench_function("zeta_lambda/prepare", |b| {
        b.iter(|| spec.prepare(black_box(&profile)).unwrap())
    });
    let prepared = spec.prepare(&profile).unwrap();
    let mut trial = 0;
    c.bench_function("zeta_lambda/run", |b| {
        b.iter(|| {
            trial += 1;
            prepared.run(&TrialStreams::new(7, trial)).unwrap()
        })
    });
}

fn monte_carlo_trials(c: &mut Criterion) {
    let (profile, spec) = setup();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for workers in [1, 4] {
        group.bench_function(format!("10k_trials_{workers}_workers"), |b| {
            b.iter(|| monte_carlo(&spec, &profile, 10_000, 1, workers).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, single_run, monte_carlo_trials);
criterion_main!(benches);
