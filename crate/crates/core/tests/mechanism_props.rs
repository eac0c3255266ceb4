use mechlab_core::analysis::{monte_carlo, verdict_matches, DoublingPoint};
use mechlab_core::geometry::{CellDensity, PartitionCell};
use mechlab_core::mechanisms::{
    assess_all, others_at, subspace_point, subspace_rays, ValueDistribution,
};
use mechlab_core::oracles::random_polytope_around;
use mechlab_core::suites::{random_instance, random_subspace_instance};
use mechlab_core::{
    groves_optimal_pivot, mechanism_generalized, mechanism_zeta_lambda, vcg, weakest_type_vcg,
    welfare, LinearConstraint, MechanismSpec, PartitionPredictor, Polytope, Predictor, PriorModel,
    Relation, TrialStreams, TuningParams, TypeProfile,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conservative(rng: &mut ChaCha8Rng, profile: &TypeProfile) -> Vec<Predictor> {
    profile
        .agents()
        .iter()
        .map(|t| Predictor::fixed(&random_polytope_around(rng, t.as_slice(), 3)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conservative_weakest_type_prices_dominate_vcg(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_instance(&mut rng);
        let predictors = conservative(&mut rng, &profile);
        let wt = weakest_type_vcg(&profile, &predictors).unwrap();
        let base = vcg(&profile);
        prop_assert_eq!(wt.allocation, base.allocation);
        prop_assert_eq!(wt.participants.len(), profile.num_agents());
        for i in 0..profile.num_agents() {
            prop_assert!(wt.payments[i] >= base.payments[i] - 1e-9);
        }
        prop_assert!(wt.revenue >= base.revenue - 1e-9);
    }

    #[test]
    fn doubling_payments_lie_on_the_discretization(seed in any::<u64>(), trial in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_instance(&mut rng);
        let n = profile.num_agents();
        let predictors = conservative(&mut rng, &profile);
        let params = TuningParams {
            zeta: (0..n).map(|_| rng.gen_range(0.1..5.0)).collect(),
            lambda: (0..n).map(|_| rng.gen_range(0.05..3.0)).collect(),
        };
        let out = mechanism_zeta_lambda(&profile, &predictors, &params, &TrialStreams::new(seed, trial)).unwrap();
        let assessments = assess_all(&profile, &predictors).unwrap();
        let ks = out.draws.k.clone().unwrap();
        let k_max = out.draws.k_max.clone().unwrap();
        for i in 0..n {
            prop_assert!(ks[i] <= k_max[i]);
            let span = (assessments[i].measures.delta_vcg + params.zeta[i]) / params.lambda[i];
            // K is the least non-negative integer with 2^K ≥ span.
            prop_assert!(2f64.powi(k_max[i] as i32) >= span * (1.0 - 1e-12));
            prop_assert!(k_max[i] == 0 || 2f64.powi(k_max[i] as i32 - 1) < span);
            if out.participates(i) {
                let expected = assessments[i].weakest.welfare + params.zeta[i]
                    - 2f64.powi(ks[i] as i32) * params.lambda[i]
                    - others_at(&profile, i, out.allocation);
                prop_assert!((out.payments[i] - expected).abs() <= 1e-9);
            } else {
                prop_assert_eq!(out.payments[i], 0.0);
            }
        }
    }

    #[test]
    fn value_formula_matches_direct_enumeration(
        theta_star in 0.0..50.0f64,
        zeta in -5.0..20.0f64,
        lambda_log2 in -12i32..4,
        delta_err in -10.0..20.0f64,
        delta_vcg in 0.0..30.0f64,
    ) {
        prop_assume!(delta_vcg + zeta > 0.0);
        let lambda = 2f64.powi(lambda_log2);
        let p = DoublingPoint { theta_star, zeta, lambda, delta_err, delta_vcg };
        // Independent oracle: grow K until λ2^K covers the span, then walk
        // the exponents and test θ* ≥ payment directly.
        let mut big_k = 0u32;
        while lambda * 2f64.powi(big_k as i32) < delta_vcg + zeta {
            big_k += 1;
        }
        let mut value = 0.0;
        let mut payment = 0.0;
        for k in 0..=big_k {
            let price = theta_star - delta_err + zeta - lambda * 2f64.powi(k as i32);
            if theta_star - price >= -1e-9 {
                value += theta_star;
                payment += price;
            }
        }
        let count = (big_k + 1) as f64;
        prop_assert_eq!(p.k_max().unwrap(), big_k);
        prop_assert!((p.expected_value().unwrap() - value / count).abs() <= 1e-9 * (1.0 + theta_star));
        prop_assert!((p.exact_expected_payment().unwrap() - payment / count).abs() <= 1e-9 * (1.0 + payment.abs()));
    }
}

#[test]
fn some_dyadic_tuple_sits_between_half_and_full_type() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in [1usize, 2] {
        for h in [4.0f64, 16.0, 64.0] {
            let levels = h.log2() as u32;
            for _ in 0..30 {
                let (profile, spec) = random_subspace_instance(&mut rng, k, h).unwrap();
                for (i, theta) in profile.agents().iter().enumerate() {
                    let rays = subspace_rays(&spec.bases[i], h);
                    let mut tuple = vec![1u32; k];
                    let mut found = false;
                    'scan: loop {
                        let point = subspace_point(&rays, &tuple);
                        if point
                            .iter()
                            .zip(theta.as_slice())
                            .all(|(p, t)| *p <= t + 1e-9 && *p >= t / 2.0 - 1e-9)
                        {
                            found = true;
                            break;
                        }
                        for slot in tuple.iter_mut() {
                            if *slot < levels {
                                *slot += 1;
                                continue 'scan;
                            }
                            *slot = 1;
                        }
                        break;
                    }
                    assert!(
                        found,
                        "no bracketing tuple for {theta:?} with basis {:?}",
                        spec.bases[i]
                    );
                }
            }
        }
    }
}

#[test]
fn discrete_prior_pivot_beats_a_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let profile = random_instance(&mut rng);
        let m = profile.num_allocations();
        let agent = rng.gen_range(0..profile.num_agents());
        let support: Vec<Vec<f64>> = (0..rng.gen_range(1..=4))
            .map(|_| (0..m).map(|_| rng.gen_range(0.0..100.0)).collect())
            .collect();
        let mut probabilities: Vec<f64> = support.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = probabilities.iter().sum();
        probabilities.iter_mut().for_each(|q| *q /= total);
        let prior = PriorModel::Discrete {
            types: support.clone(),
            probabilities: probabilities.clone(),
        };
        // Revenue of a pivot, by running the Groves rule on each support type.
        let revenue = |pivot: f64| -> f64 {
            support
                .iter()
                .zip(&probabilities)
                .map(|(t, q)| {
                    let rows: Vec<Vec<f64>> = profile
                        .agents()
                        .iter()
                        .enumerate()
                        .map(|(j, a)| {
                            if j == agent {
                                t.clone()
                            } else {
                                a.as_slice().to_vec()
                            }
                        })
                        .collect();
                    let reported = TypeProfile::from_rows(rows).unwrap();
                    let (_, alloc) = welfare(&reported);
                    let price = pivot - others_at(&reported, agent, alloc);
                    if t[alloc] - price >= -1e-9 {
                        q * price
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let pivot = groves_optimal_pivot(&prior, &profile, agent).unwrap();
        let best = revenue(pivot);
        let hi = 100.0 * m as f64
            + profile
                .agents()
                .iter()
                .map(|t| t.as_slice().iter().sum::<f64>())
                .sum::<f64>();
        for step in 0..=4000 {
            let grid = hi * step as f64 / 4000.0;
            assert!(
                revenue(grid) <= best + 1e-6,
                "pivot {grid} earns {} > {best} at {pivot}",
                revenue(grid)
            );
        }
    }
}

#[test]
fn iid_single_item_pivot_is_max_of_reserve_and_rival() {
    let d = ValueDistribution::Uniform {
        low: 0.0,
        high: 1.0,
    };
    let prior = PriorModel::SingleItemIid { distribution: d };
    let profile = mechlab_core::env::single_item_profile(&[0.9, 0.3, 0.7]).unwrap();
    assert!((groves_optimal_pivot(&prior, &profile, 0).unwrap() - 0.7).abs() <= 1e-12);
    let low = mechlab_core::env::single_item_profile(&[0.9, 0.2]).unwrap();
    assert!((groves_optimal_pivot(&prior, &low, 0).unwrap() - 0.5).abs() <= 1e-6);
}

/// Two-allocation instance with two predicted cells for the focal agent:
/// an exact one (Δ^err = 0) and an aggressive one (Δ^err = −3).
fn two_cell_instance() -> (TypeProfile, Vec<PartitionPredictor>) {
    let profile = TypeProfile::from_rows(vec![vec![15.0, 0.0], vec![2.0, 10.0]]).unwrap();
    let exact = Predictor::fixed(&Polytope::new(vec![LinearConstraint::single(
        0,
        Relation::Ge,
        15.0,
    )]));
    let aggressive = Predictor::fixed(&Polytope::new(vec![LinearConstraint::single(
        0,
        Relation::Ge,
        18.0,
    )]));
    let focal = PartitionPredictor {
        cells: vec![
            PartitionCell {
                predictor: exact,
                density: None,
            },
            PartitionCell {
                predictor: aggressive,
                density: None,
            },
        ],
        probabilities: vec![0.25, 0.75],
    };
    (
        profile,
        vec![
            focal,
            PartitionPredictor::single(Predictor::uninformative()),
        ],
    )
}

#[test]
fn sampled_cell_error_follows_cell_probabilities() {
    let (profile, partitions) = two_cell_instance();
    let params = TuningParams::uniform(2, 1.0, 1.0);
    let cells = [
        DoublingPoint {
            theta_star: 15.0,
            zeta: 1.0,
            lambda: 1.0,
            delta_err: 0.0,
            delta_vcg: 7.0,
        },
        DoublingPoint {
            theta_star: 15.0,
            zeta: 1.0,
            lambda: 1.0,
            delta_err: -3.0,
            delta_vcg: 10.0,
        },
    ];
    let trials = 40_000u64;
    let mut counts = [0u64; 2];
    let mut value = [0.0f64; 2];
    for t in 0..trials {
        let out = mechanism_generalized(&profile, &partitions, &params, &TrialStreams::new(5, t))
            .unwrap();
        let c = out.draws.cell.as_ref().unwrap()[0];
        counts[c] += 1;
        if out.participates(0) {
            value[c] += 15.0;
        }
    }
    let share = counts[0] as f64 / trials as f64;
    let se = (0.25f64 * 0.75 / trials as f64).sqrt();
    assert!((share - 0.25).abs() <= 3.0 * se, "cell share {share}");
    for c in 0..2 {
        let mean = value[c] / counts[c] as f64;
        let expected = cells[c].expected_value().unwrap();
        // Value is 15 times a Bernoulli; its SE is bounded by 7.5/√n.
        let se = 7.5 / (counts[c] as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "cell {c}: {mean} vs {expected}"
        );
    }
}

#[test]
fn point_mass_at_truth_gives_full_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let profile = random_instance(&mut rng);
        let n = profile.num_agents();
        let partitions: Vec<PartitionPredictor> = profile
            .agents()
            .iter()
            .map(|t| PartitionPredictor {
                cells: vec![PartitionCell {
                    predictor: Predictor::uninformative(),
                    density: Some(CellDensity::PointMass {
                        point: t.as_slice().to_vec(),
                    }),
                }],
                probabilities: vec![1.0],
            })
            .collect();
        let spec = MechanismSpec::Generalized {
            partitions,
            params: TuningParams::uniform(n, 1.0, 1.0),
        };
        let mc = monte_carlo(&spec, &profile, 500, 3, 1).unwrap();
        let alloc = welfare(&profile).1;
        for i in 0..n {
            assert_eq!(mc.agent_value[i].mean, profile.agents()[i][alloc]);
            assert_eq!(mc.agent_value[i].se, 0.0);
        }
    }
}

#[test]
fn single_cell_partition_matches_fixed_prediction_in_distribution() {
    let (profile, predictors) = mechlab_core::analysis::scalar_instance(15.0, 2.0, 10.0).unwrap();
    let params = TuningParams {
        zeta: vec![0.0, 1.0],
        lambda: vec![1.0, 1.0],
    };
    let partitions: Vec<PartitionPredictor> = predictors
        .iter()
        .cloned()
        .map(PartitionPredictor::single)
        .collect();
    let spec = MechanismSpec::Generalized { partitions, params };
    let mc = monte_carlo(&spec, &profile, 50_000, 11, 0).unwrap();
    assert!(
        verdict_matches(&mc.agent_payment[0], 6.8).ok(),
        "{:?}",
        mc.agent_payment[0]
    );
}
