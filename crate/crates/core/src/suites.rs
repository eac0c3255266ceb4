//! End-to-end verification suites.
//!
//! Each suite builds seeded instances, runs the relevant solvers or
//! mechanisms, and compares them against closed forms or independent
//! reference computations. The CLI's `verify` subcommand and the workspace
//! acceptance tests both call into this module.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    default_tuning_denominator, discard_expectation, monte_carlo, parallel_stats, scalar_instance,
    subspace_expectations, thm7_consistency_robustness, verdict_at_least, verdict_matches,
    DoublingPoint, Stat,
};
use crate::env::{
    make_environment, single_item_profile, welfare, EnvKind, GeneratorConfig, TypeProfile,
    TypeVector, CMP_EPS,
};
use crate::error::{Error, Result};
use crate::geometry::{
    constraint_generation, weakest_type_lp, BoundExpr, BoundTerm, CellDensity, ConstraintTemplate,
    DenseOracle, LinearConstraint, PartitionCell, PartitionPredictor, Polytope, Predictor,
};
use crate::lp::Relation;
use crate::mechanisms::{
    assess_all, groves_mechanism, vcg, weakest_type_am, weakest_type_vcg, AmParams, MechanismSpec,
    PriorModel, SubspaceSpec, TuningParams, ValueDistribution,
};
use crate::oracles::{min_welfare_by_vertices, random_feasible_polytope, random_polytope_around};
use crate::streams::{substream, TrialStreams};

/// Names accepted by [`run_suite`].
pub const SUITES: [&str; 10] = [
    "thm2",
    "thm5",
    "thm6",
    "thm7",
    "thm9",
    "myerson",
    "lp_oracle",
    "baselines",
    "price_floor",
    "ic",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Worker threads for Monte Carlo; 0 uses the global pool.
    pub workers: usize,
    /// Overrides each suite's default Monte Carlo trial count.
    pub trials: Option<u64>,
}

impl SuiteOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            workers: 0,
            trials: None,
        }
    }

    fn trials(&self, default: u64) -> u64 {
        self.trials.unwrap_or(default)
    }

    fn rng(&self, tag: u64) -> ChaCha8Rng {
        substream(self.seed, 0, u64::MAX - 1, tag)
    }
}

pub fn run_suite(name: &str, opts: &SuiteOptions) -> Result<SuiteReport> {
    let checks = match name {
        "thm2" => exact_revenue(opts)?,
        "thm5" => doubling_value(opts)?,
        "thm6" => doubling_payment(opts)?,
        "thm7" => default_tuning(opts)?,
        "thm9" => subspace_bounds(opts)?,
        "myerson" => myerson(opts)?,
        "lp_oracle" => lp_oracle(opts)?,
        "baselines" => baselines(opts)?,
        "price_floor" => price_floor(opts)?,
        "ic" => ic(opts)?,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown suite '{other}' (expected one of {})",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        seed: opts.seed,
        checks,
    })
}

/// Summarizes `(index, ok, detail)` results as one check listing failures.
fn tally(name: &str, results: Vec<(usize, bool, String)>) -> Check {
    let total = results.len();
    let failed: Vec<String> = results
        .into_iter()
        .filter(|r| !r.1)
        .map(|(i, _, d)| format!("#{i}: {d}"))
        .collect();
    let passed = failed.is_empty();
    let mut detail = format!("{}/{} passed", total - failed.len(), total);
    if !passed {
        detail.push_str("; ");
        detail.push_str(
            &failed
                .iter()
                .take(5)
                .cloned()
                .collect::<Vec<_>>()
                .join("; "),
        );
        if failed.len() > 5 {
            detail.push_str(&format!("; ... {} more", failed.len() - 5));
        }
    }
    Check::new(name, passed, detail)
}

fn fmt_stat(s: &Stat) -> String {
    format!("{:.6} ± {:.6}", s.mean, s.se)
}

/// A small random environment drawn from one of the generator families.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> TypeProfile {
    let kind = match rng.gen_range(0..5) {
        0 => EnvKind::CombinatorialAuction {
            bidders: rng.gen_range(1..=2),
            items: 2,
        },
        1 => EnvKind::Matching {
            items: rng.gen_range(1..=2),
            buyers: rng.gen_range(1..=3),
        },
        2 => EnvKind::SharedOutcome {
            agents: rng.gen_range(1..=3),
            outcomes: rng.gen_range(2..=5),
        },
        3 => EnvKind::SingleItem {
            bidders: rng.gen_range(1..=3),
        },
        _ => EnvKind::SharedOutcome {
            agents: rng.gen_range(2..=4),
            outcomes: rng.gen_range(1..=3),
        },
    };
    make_environment(&kind, rng.gen(), &GeneratorConfig::default())
        .expect("small generator instances fit the cap")
        .1
}

/// Random polytope that contains `truth`, hence a conservative prediction.
fn conservative_predictor<R: Rng + ?Sized>(rng: &mut R, truth: &TypeVector) -> Predictor {
    Predictor::fixed(&random_polytope_around(rng, truth.as_slice(), 3))
}

/// Polytope all of whose points dominate `truth + margin`, so every
/// predicted weakest type overstates the welfare.
fn aggressive_predictor<R: Rng + ?Sized>(rng: &mut R, truth: &TypeVector) -> Predictor {
    let margin = rng.gen_range(0.5..30.0);
    Predictor::fixed(&Polytope::new(
        truth
            .as_slice()
            .iter()
            .enumerate()
            .map(|(a, v)| LinearConstraint::single(a, Relation::Ge, v + margin))
            .collect(),
    ))
}

/// `θ̃[α*] ≥ θ_i[α*]`: exactly correct minimum welfare.
fn exact_predictor(profile: &TypeProfile, agent: usize) -> Predictor {
    let allocation = welfare(profile).1;
    Predictor::fixed(&Polytope::new(vec![LinearConstraint::single(
        allocation,
        Relation::Ge,
        profile.agents()[agent][allocation],
    )]))
}

fn lp_oracle(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut rng = opts.rng(1);
    let mut vertex = Vec::new();
    let mut cg = Vec::new();
    let mut certificates = Vec::new();
    for idx in 0..100 {
        let dim = rng.gen_range(1..=6);
        let agents = rng.gen_range(1..=3);
        let rows = (0..agents)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect();
        let profile = TypeProfile::from_rows(rows)?;
        let agent = rng.gen_range(0..agents);
        let polytope = random_feasible_polytope(&mut rng, dim, 4);
        let lp = weakest_type_lp(&polytope, &profile, agent)?;
        let (brute, _) = min_welfare_by_vertices(&polytope, &profile, agent)
            .ok_or_else(|| Error::Validation("vertex enumeration found no vertex".into()))?;
        vertex.push((
            idx,
            (lp.welfare - brute).abs() <= 1e-6,
            format!("lp {} vs vertices {brute}", lp.welfare),
        ));
        let oracle = DenseOracle::for_agent(&profile, agent)?;
        let report = constraint_generation(&polytope, &oracle)?;
        cg.push((
            idx,
            (report.result.welfare - lp.welfare).abs() <= 1e-6 && report.constraints_added <= dim,
            format!(
                "cg {} vs lp {} with {} additions (|Γ| = {dim})",
                report.result.welfare, lp.welfare, report.constraints_added
            ),
        ));
        let others = profile.others_sum(agent)?;
        let at_cert = lp.weakest[lp.certificate] + others[lp.certificate];
        certificates.push((
            idx,
            polytope.contains(lp.weakest.as_slice()) && (at_cert - lp.welfare).abs() <= 1e-9,
            format!("certificate value {at_cert} vs welfare {}", lp.welfare),
        ));
    }
    Ok(vec![
        tally("lp welfare equals vertex-enumeration minimum", vertex),
        tally("constraint generation matches lp within |Γ| additions", cg),
        tally(
            "weakest type feasible and certificate attains the max",
            certificates,
        ),
    ])
}

fn exact_revenue(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut rng = opts.rng(2);
    let mut revenue = Vec::new();
    let mut welfare_exact = Vec::new();
    for idx in 0..200 {
        let profile = random_instance(&mut rng);
        let predictors: Vec<Predictor> = profile
            .agents()
            .iter()
            .map(|t| conservative_predictor(&mut rng, t))
            .collect();
        let assessments = assess_all(&profile, &predictors)?;
        let out = weakest_type_vcg(&profile, &predictors)?;
        let (opt, _) = welfare(&profile);
        let total_err: f64 = assessments.iter().map(|a| a.measures.delta_err).sum();
        revenue.push((
            idx,
            (out.revenue - (opt - total_err)).abs() <= 1e-6,
            format!(
                "revenue {} vs OPT - Σerr = {}",
                out.revenue,
                opt - total_err
            ),
        ));
        welfare_exact.push((
            idx,
            out.welfare == opt,
            format!("welfare {} vs OPT {opt}", out.welfare),
        ));
    }
    Ok(vec![
        tally("revenue equals OPT minus total error", revenue),
        tally("welfare equals OPT exactly", welfare_exact),
    ])
}

/// Grid covering both doubling regimes around the reference instance.
pub fn value_grid() -> Vec<DoublingPoint> {
    let mut grid = Vec::new();
    for &(delta_err, zetas) in &[
        (2.0, &[0.0, 2.5, 3.5, 5.0, 8.0, -4.0][..]),
        (0.0, &[0.0, 1.0, 3.0, 6.0][..]),
        (-3.0, &[0.0, 1.0, 4.0][..]),
        (5.0, &[0.0, 5.5, 9.0][..]),
    ] {
        for &zeta in zetas {
            for &lambda in &[1.0, 0.5, 2f64.powi(-10)] {
                grid.push(DoublingPoint {
                    theta_star: 15.0,
                    zeta,
                    lambda,
                    delta_err,
                    delta_vcg: 10.0,
                });
            }
        }
    }
    grid
}

fn doubling_mc(
    point: &DoublingPoint,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<(Stat, Stat)> {
    let (profile, predictors) =
        scalar_instance(point.theta_star, point.delta_err, point.delta_vcg)?;
    let spec = MechanismSpec::ZetaLambda {
        predictors,
        params: TuningParams {
            zeta: vec![point.zeta, 1.0],
            lambda: vec![point.lambda, 1.0],
        },
    };
    let mc = monte_carlo(&spec, &profile, trials, seed, workers)?;
    Ok((mc.agent_value[0], mc.agent_payment[0]))
}

fn doubling_value(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials(100_000);
    let grid = value_grid();
    let mut value = Vec::new();
    let mut bound = Vec::new();
    let mut closed = Vec::new();
    for (idx, p) in grid.iter().enumerate() {
        let (v, _) = doubling_mc(p, trials, substream_seed(opts.seed, 5, idx), opts.workers)?;
        let expected = p.expected_value()?;
        value.push((
            idx,
            verdict_matches(&v, expected).ok(),
            format!(
                "{p:?}: empirical {} vs closed form {expected}",
                fmt_stat(&v)
            ),
        ));
        let exact = p.exact_expected_payment()?;
        let lower = p.payment_lower_bound()?;
        bound.push((
            idx,
            exact >= lower - 1e-9,
            format!("{p:?}: exact {exact} vs bound {lower}"),
        ));
        let summed = p.exact_expected_value()?;
        closed.push((
            idx,
            (summed - expected).abs() <= 1e-9,
            format!("{p:?}: summed {summed} vs closed form {expected}"),
        ));
    }
    let spot = DoublingPoint {
        theta_star: 15.0,
        zeta: 0.0,
        lambda: 1.0,
        delta_err: 2.0,
        delta_vcg: 10.0,
    };
    let spot_payment = spot.exact_expected_payment()?;
    Ok(vec![
        tally(
            &format!("empirical value within 3 SE of closed form ({trials} trials)"),
            value,
        ),
        tally("exact expected payment at least the payment bound", bound),
        tally("closed-form value equals summation over exponents", closed),
        Check::new(
            "reference instance expected payment is 6.8",
            (spot_payment - 6.8).abs() <= 1e-9,
            format!("{spot_payment}"),
        ),
    ])
}

fn substream_seed(seed: u64, suite: u64, idx: usize) -> u64 {
    substream(seed, suite, idx as u64, 0).gen()
}

/// Payment-bound grid. Every point keeps `(Δ^VCG + ζ)/λ ≥ 1`, the range in
/// which the largest exponent is not clamped.
pub fn payment_bound_grid() -> Vec<DoublingPoint> {
    let mut grid = Vec::new();
    for &lambda in &[2f64.powi(-100), 2f64.powi(-10), 0.5, 1.0, 2.0] {
        for &(theta_star, delta_vcg) in &[(15.0, 10.0), (40.0, 3.0), (8.0, 8.0)] {
            for &delta_err in &[-delta_vcg, -1.0, 0.0, 2.0, theta_star - delta_vcg] {
                for &zeta in &[-0.5 * delta_vcg, 0.0, 1.0, 4.0, 12.0] {
                    let p = DoublingPoint {
                        theta_star,
                        zeta,
                        lambda,
                        delta_err,
                        delta_vcg,
                    };
                    let c = delta_err + delta_vcg;
                    if (delta_vcg + zeta) / lambda >= 1.0 && (0.0..=theta_star).contains(&c) {
                        grid.push(p);
                    }
                }
            }
        }
    }
    grid
}

fn doubling_payment(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials(20_000);
    let grid = payment_bound_grid();
    let mut bound = Vec::new();
    let mut agreement = Vec::new();
    for (idx, p) in grid.iter().enumerate() {
        let exact = p.exact_expected_payment()?;
        let lower = p.payment_lower_bound()?;
        bound.push((
            idx,
            exact >= lower - 1e-9,
            format!("{p:?}: exact {exact} vs bound {lower}"),
        ));
        // The Monte Carlo cross-check runs on a subsample to keep the suite quick.
        if idx % 5 == 0 {
            let (_, pay) = doubling_mc(p, trials, substream_seed(opts.seed, 6, idx), opts.workers)?;
            agreement.push((
                idx,
                verdict_matches(&pay, exact).ok(),
                format!("{p:?}: empirical {} vs exact {exact}", fmt_stat(&pay)),
            ));
        }
    }
    Ok(vec![
        tally("exact expected payment at least the payment bound", bound),
        tally(
            &format!("empirical payment within 3 SE of exact ({trials} trials)"),
            agreement,
        ),
    ])
}

fn default_params(agents: usize) -> TuningParams {
    TuningParams::uniform(agents, 1.0, 1.0)
}

fn default_tuning(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials(20_000);
    let mut rng = opts.rng(7);
    let mut welfare_opt = Vec::new();
    let mut payments = Vec::new();
    for idx in 0..50 {
        let profile = random_instance(&mut rng);
        let n = profile.num_agents();
        let predictors: Vec<Predictor> = (0..n).map(|i| exact_predictor(&profile, i)).collect();
        let spec = MechanismSpec::ZetaLambda {
            predictors: predictors.clone(),
            params: default_params(n),
        };
        let mc = monte_carlo(
            &spec,
            &profile,
            trials.min(5_000),
            substream_seed(opts.seed, 7, idx),
            opts.workers,
        )?;
        welfare_opt.push((
            idx,
            mc.welfare.mean == mc.optimal_welfare && mc.welfare.se == 0.0,
            format!(
                "welfare {} vs OPT {}",
                fmt_stat(&mc.welfare),
                mc.optimal_welfare
            ),
        ));
        let (_, allocation) = welfare(&profile);
        for (i, a) in assess_all(&profile, &predictors)?.iter().enumerate() {
            let theta_star = profile.agents()[i][allocation];
            let point = DoublingPoint {
                theta_star,
                zeta: 1.0,
                lambda: 1.0,
                delta_err: a.measures.delta_err,
                delta_vcg: a.measures.delta_vcg,
            };
            let exact = point.exact_expected_payment()?;
            let lower = theta_star / default_tuning_denominator(a.measures.delta_vcg) as f64;
            payments.push((
                idx * 10 + i,
                exact >= lower - CMP_EPS,
                format!(
                    "agent {i}: exact E[p] {exact} vs θ*/D {lower} (Δvcg {})",
                    a.measures.delta_vcg
                ),
            ));
        }
    }

    // Low-value instance with an exact prediction: θ* = Δ^VCG = 0.5.
    let small = DoublingPoint {
        theta_star: 0.5,
        zeta: 1.0,
        lambda: 1.0,
        delta_err: 0.0,
        delta_vcg: 0.5,
    };
    let small_exact = small.exact_expected_payment()?;
    let small_bound = small.theta_star / default_tuning_denominator(small.delta_vcg) as f64;

    let mut robust = Vec::new();
    for idx in 0..30 {
        let profile = random_instance(&mut rng);
        let n = profile.num_agents();
        let predictors: Vec<Predictor> = profile
            .agents()
            .iter()
            .map(|t| {
                if rng.gen_bool(0.7) {
                    aggressive_predictor(&mut rng, t)
                } else {
                    random_predictor(&mut rng, t.len())
                }
            })
            .collect();
        robust.push((
            idx,
            robustness_case(&profile, predictors, n, trials, opts, idx)?,
        ));
    }
    let (welfare_robust, revenue_robust): (Vec<_>, Vec<_>) = robust
        .into_iter()
        .map(|(idx, (w, r))| ((idx, w.0, w.1), (idx, r.0, r.1)))
        .unzip();

    // Aggressive prediction for an agent whose doubling overshoots the
    // vanilla VCG price.
    let profile = TypeProfile::from_rows(vec![vec![5.01, 0.0], vec![5.0, 10.0]])?;
    let predictors = vec![
        Predictor::fixed(&Polytope::new(vec![LinearConstraint::single(
            0,
            Relation::Ge,
            15.0,
        )])),
        Predictor::uninformative(),
    ];
    let (cw, cr) = robustness_case(&profile, predictors, 2, trials, opts, 1000)?;

    Ok(vec![
        tally(
            "exact predictions: welfare equals OPT in every trial",
            welfare_opt,
        ),
        tally(
            "exact predictions: E[p_i] at least θ_i[α*]/(1+⌈log2(1+Δvcg)⌉) (seeded instances)",
            payments,
        ),
        Check::new(
            "exact predictions: E[p_i] at least θ_i[α*]/(1+⌈log2(1+Δvcg)⌉) (θ* = Δvcg = 0.5)",
            small_exact >= small_bound - CMP_EPS,
            format!("exact E[p] {small_exact} vs bound {small_bound}"),
        ),
        tally(
            "adversarial predictions: welfare at least OPT/D within 3 SE",
            welfare_robust,
        ),
        tally(
            "adversarial predictions: revenue at least VCG/D within 3 SE",
            revenue_robust,
        ),
        Check::new(
            "constructed adversarial instance: welfare at least OPT/D",
            cw.0,
            cw.1,
        ),
        Check::new(
            "constructed adversarial instance: revenue at least VCG/D",
            cr.0,
            cr.1,
        ),
    ])
}

/// Prediction centred on an unrelated random type.
fn random_predictor<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Predictor {
    let anchor = random_type(rng, dim);
    Predictor::fixed(&random_polytope_around(rng, &anchor, 3))
}

fn random_type<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(0.0..100.0)).collect()
}

type Verdicts = ((bool, String), (bool, String));

fn robustness_case(
    profile: &TypeProfile,
    predictors: Vec<Predictor>,
    n: usize,
    trials: u64,
    opts: &SuiteOptions,
    idx: usize,
) -> Result<Verdicts> {
    let assessments = assess_all(profile, &predictors)?;
    let ratios = thm7_consistency_robustness(
        &assessments
            .iter()
            .map(|a| a.measures.delta_vcg)
            .collect::<Vec<_>>(),
    );
    let spec = MechanismSpec::ZetaLambda {
        predictors,
        params: default_params(n),
    };
    let mc = monte_carlo(
        &spec,
        profile,
        trials,
        substream_seed(opts.seed, 70, idx),
        opts.workers,
    )?;
    let welfare_bound = ratios.welfare_robustness * mc.optimal_welfare;
    let revenue_bound = ratios.revenue_robustness * vcg(profile).revenue;
    Ok((
        (
            verdict_at_least(&mc.welfare, welfare_bound).ok(),
            format!("welfare {} vs bound {welfare_bound}", fmt_stat(&mc.welfare)),
        ),
        (
            verdict_at_least(&mc.revenue, revenue_bound).ok(),
            format!("revenue {} vs bound {revenue_bound}", fmt_stat(&mc.revenue)),
        ),
    ))
}

/// On-subspace instance: each agent's basis vectors have disjoint supports
/// covering the allocations, so orthonormality holds by construction.
pub fn random_subspace_instance<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    value_bound: f64,
) -> Result<(TypeProfile, SubspaceSpec)> {
    let agents = rng.gen_range(1..=3);
    let dim = rng.gen_range(k..=k + 3);
    let mut rows = Vec::with_capacity(agents);
    let mut bases = Vec::with_capacity(agents);
    for _ in 0..agents {
        // Assign every allocation to one of k non-empty blocks.
        let mut block: Vec<usize> = (0..dim)
            .map(|a| if a < k { a } else { rng.gen_range(0..k) })
            .collect();
        for a in (1..dim).rev() {
            block.swap(a, rng.gen_range(0..=a));
        }
        let mut theta = vec![0.0; dim];
        let mut basis = Vec::with_capacity(k);
        for j in 0..k {
            let raw: Vec<f64> = (0..dim)
                .map(|a| {
                    if block[a] == j {
                        rng.gen_range(1.0..2.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: Vec<f64> = raw.iter().map(|v| v / norm).collect();
            let lo = u
                .iter()
                .filter(|v| **v > 0.0)
                .fold(f64::INFINITY, |m, v| m.min(*v));
            let hi = u.iter().fold(0.0f64, |m, v| m.max(*v));
            let c = rng.gen_range(1.0 / lo..=value_bound / hi);
            for a in 0..dim {
                theta[a] +=
                    (c * u[a]).clamp(1.0, value_bound) * if block[a] == j { 1.0 } else { 0.0 };
            }
            basis.push(u);
        }
        rows.push(theta);
        bases.push(basis);
    }
    Ok((
        TypeProfile::from_rows(rows)?,
        SubspaceSpec { bases, value_bound },
    ))
}

fn subspace_bounds(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials(20_000);
    let mut rng = opts.rng(9);
    let mut welfare_bound = Vec::new();
    let mut revenue_bound = Vec::new();
    let mut exact_agreement = Vec::new();
    let mut idx = 0;
    for k in [1usize, 2] {
        for h in [4.0f64, 16.0] {
            let levels = h.log2();
            for _ in 0..20 {
                let (profile, spec) = random_subspace_instance(&mut rng, k, h)?;
                let mc = monte_carlo(
                    &MechanismSpec::Subspace { spec: spec.clone() },
                    &profile,
                    trials,
                    substream_seed(opts.seed, 9, idx),
                    opts.workers,
                )?;
                let opt = mc.optimal_welfare;
                let wb = opt / levels;
                let rb = opt / (2.0 * k as f64 * levels.powi(k as i32));
                let tag = format!("k={k} H={h}");
                welfare_bound.push((
                    idx,
                    verdict_at_least(&mc.welfare, wb).ok(),
                    format!("{tag}: welfare {} vs OPT/log2H {wb}", fmt_stat(&mc.welfare)),
                ));
                revenue_bound.push((
                    idx,
                    verdict_at_least(&mc.revenue, rb).ok(),
                    format!("{tag}: revenue {} vs bound {rb}", fmt_stat(&mc.revenue)),
                ));
                let exact: f64 = subspace_expectations(&profile, &spec)?
                    .iter()
                    .map(|e| e.1)
                    .sum();
                exact_agreement.push((
                    idx,
                    verdict_matches(&mc.revenue, exact).ok(),
                    format!(
                        "{tag}: revenue {} vs enumerated {exact}",
                        fmt_stat(&mc.revenue)
                    ),
                ));
                idx += 1;
            }
        }
    }
    let single = TypeProfile::from_rows(vec![vec![4.0]])?;
    let spec = SubspaceSpec {
        bases: vec![vec![vec![1.0]]],
        value_bound: 4.0,
    };
    let e = subspace_expectations(&single, &spec)?[0];
    Ok(vec![
        tally(
            &format!("welfare at least OPT/log2H within 3 SE ({trials} trials)"),
            welfare_bound,
        ),
        tally(
            "revenue at least OPT/(2k(log2H)^k) within 3 SE",
            revenue_bound,
        ),
        tally(
            "empirical revenue within 3 SE of enumerated expectation",
            exact_agreement,
        ),
        Check::new(
            "single-allocation instance: E[value] = 4 and E[p] = 1.5",
            e.0 == 4.0 && e.1 == 1.5,
            format!("E[value] {} E[p] {}", e.0, e.1),
        ),
    ])
}

/// `n ∫_r^hi φ(v) f(v) F(v)^{n-1} dv` by composite Simpson's rule.
pub fn optimal_revenue_integral(d: &ValueDistribution, bidders: usize, reserve: f64) -> f64 {
    let (_, hi) = d.effective_support();
    let steps = 20_000;
    let h = (hi - reserve) / steps as f64;
    let g = |v: f64| d.virtual_value(v) * d.pdf(v) * d.cdf(v).powi(bidders as i32 - 1);
    let mut s = g(reserve) + g(hi);
    for j in 1..steps {
        let x = reserve + h * j as f64;
        s += if j % 2 == 1 { 4.0 } else { 2.0 } * g(x);
    }
    bidders as f64 * s * h / 3.0
}

fn myerson(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials(200_000);
    let d = ValueDistribution::Uniform {
        low: 0.0,
        high: 1.0,
    };
    let reserve = d.reserve_price()?;
    let integral = optimal_revenue_integral(&d, 2, reserve);
    let prior = PriorModel::SingleItemIid { distribution: d };
    let master = substream_seed(opts.seed, 8, 0);
    let stats = parallel_stats(trials, opts.workers, 1, |t| {
        let mut rng = TrialStreams::new(master, t).global();
        let bids = [d.sample(&mut rng), d.sample(&mut rng)];
        let profile = single_item_profile(&bids)?;
        let out = groves_mechanism(&profile, &[prior.clone(), prior.clone()])?;
        Ok(vec![out.revenue])
    })?;
    let revenue = stats[0];
    let exp = ValueDistribution::Exponential { rate: 2.0 };
    let exp_reserve = exp.reserve_price()?;
    Ok(vec![
        Check::new(
            "uniform prior reserve is 0.5",
            (reserve - 0.5).abs() <= 1e-6,
            format!("reserve {reserve}"),
        ),
        Check::new(
            "numeric optimum is 5/12",
            (integral - 5.0 / 12.0).abs() <= 1e-6,
            format!("integral {integral}"),
        ),
        Check::new(
            format!("mechanism revenue within 1% of optimum ({trials} trials)"),
            (revenue.mean - integral).abs() <= 0.01 * integral,
            format!("revenue {} vs {integral}", fmt_stat(&revenue)),
        ),
        Check::new(
            "exponential prior reserve is 1/rate",
            (exp_reserve - 0.5).abs() <= 1e-6,
            format!("reserve {exp_reserve}"),
        ),
    ])
}

fn baselines(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let trials = opts.trials(20_000);
    let mut rng = opts.rng(11);
    let mut exact = Vec::new();
    let mut wrong = Vec::new();
    let mut discard = Vec::new();
    for idx in 0..30 {
        let profile = random_instance(&mut rng);
        let n = profile.num_agents();
        let (opt, _) = welfare(&profile);
        let good: Vec<Predictor> = (0..n).map(|i| exact_predictor(&profile, i)).collect();
        let out = crate::analysis::baseline_trust(&profile, &good)?;
        exact.push((
            idx,
            (out.welfare - opt).abs() <= 1e-9 && (out.revenue - opt).abs() <= 1e-6,
            format!(
                "(welfare, revenue) = ({}, {}) vs OPT {opt}",
                out.welfare, out.revenue
            ),
        ));
        let bad: Vec<Predictor> = profile
            .agents()
            .iter()
            .map(|t| aggressive_predictor(&mut rng, t))
            .collect();
        let out = crate::analysis::baseline_trust(&profile, &bad)?;
        wrong.push((
            idx,
            out.welfare == 0.0 && out.revenue == 0.0,
            format!("(welfare, revenue) = ({}, {})", out.welfare, out.revenue),
        ));
        let mixed: Vec<Predictor> = profile
            .agents()
            .iter()
            .map(|t| {
                if rng.gen_bool(0.5) {
                    aggressive_predictor(&mut rng, t)
                } else {
                    conservative_predictor(&mut rng, t)
                }
            })
            .collect();
        let beta = rng.gen_range(0.1..0.9);
        let (ew, er) = discard_expectation(&profile, &mixed, beta)?;
        let mc = monte_carlo(
            &MechanismSpec::Discard {
                predictors: mixed,
                beta,
            },
            &profile,
            trials,
            substream_seed(opts.seed, 11, idx),
            opts.workers,
        )?;
        discard.push((
            idx,
            verdict_matches(&mc.welfare, ew).ok() && verdict_matches(&mc.revenue, er).ok(),
            format!(
                "β={beta:.3}: welfare {} vs {ew}, revenue {} vs {er}",
                fmt_stat(&mc.welfare),
                fmt_stat(&mc.revenue)
            ),
        ));
    }
    Ok(vec![
        tally("trust with exact predictions gives (OPT, OPT)", exact),
        tally("trust with overstated predictions gives (0, 0)", wrong),
        tally(
            "discard matches its two-branch expectation within 3 SE",
            discard,
        ),
    ])
}

fn price_floor(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut rng = opts.rng(12);
    let mut results = Vec::new();
    for idx in 0..1000 {
        let profile = random_instance(&mut rng);
        let predictors: Vec<Predictor> = profile
            .agents()
            .iter()
            .map(|t| conservative_predictor(&mut rng, t))
            .collect();
        let assessments = assess_all(&profile, &predictors)?;
        let out = weakest_type_vcg(&profile, &predictors)?;
        let mut ok = true;
        let mut detail = String::new();
        for (i, a) in assessments.iter().enumerate() {
            if a.measures.delta_err >= 0.0 {
                let floor = a.weakest.weakest[out.allocation];
                if out.payments[i] < floor - 1e-9 {
                    ok = false;
                    detail = format!("agent {i}: payment {} below {floor}", out.payments[i]);
                }
            }
        }
        results.push((idx, ok, detail));
    }
    Ok(vec![tally(
        "weakest-type price at least the weakest type's value",
        results,
    )])
}

/// Random misreport for a report of dimension `dim` near `truth`.
fn misreport<R: Rng + ?Sized>(rng: &mut R, truth: &TypeVector) -> TypeVector {
    let values: Vec<f64> = match rng.gen_range(0..4) {
        0 => vec![0.0; truth.len()],
        1 => truth
            .as_slice()
            .iter()
            .map(|v| v * rng.gen_range(0.0..2.0))
            .collect(),
        2 => truth
            .as_slice()
            .iter()
            .map(|v| (v + rng.gen_range(-20.0..20.0)).max(0.0))
            .collect(),
        _ => random_type(rng, truth.len()),
    };
    TypeVector::new(values).expect("misreports are non-negative")
}

fn subspace_misreport<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &SubspaceSpec,
    agent: usize,
) -> TypeVector {
    let dim = spec.bases[agent][0].len();
    let mut theta = vec![0.0; dim];
    for u in &spec.bases[agent] {
        let lo = u
            .iter()
            .filter(|v| **v > 0.0)
            .fold(f64::INFINITY, |m, v| m.min(*v));
        let hi = u.iter().fold(0.0f64, |m, v| m.max(*v));
        let c = rng.gen_range(1.0 / lo..=spec.value_bound / hi);
        for (t, v) in theta.iter_mut().zip(u) {
            if *v > 0.0 {
                *t += (c * v).clamp(1.0, spec.value_bound);
            }
        }
    }
    TypeVector::new(theta).expect("subspace misreport is positive")
}

fn ic_mechanism<R: Rng + ?Sized>(rng: &mut R, idx: usize, profile: &TypeProfile) -> MechanismSpec {
    let n = profile.num_agents();
    let m = profile.num_allocations();
    let random_predictors = |rng: &mut R| -> Vec<Predictor> {
        (0..n)
            .map(|_| {
                if rng.gen_bool(0.3) && n > 1 {
                    // Lower bound driven by the other agents' reports; a lone
                    // lower bound is feasible for any reports.
                    return Predictor {
                        constraints: vec![ConstraintTemplate {
                            coeffs: [(rng.gen_range(0..m), 1.0)].into_iter().collect(),
                            rel: Relation::Ge,
                            bound: BoundExpr {
                                constant: 0.0,
                                terms: vec![BoundTerm::MaxOther {
                                    allocation: rng.gen_range(0..m),
                                    scale: 0.5,
                                }],
                            },
                        }],
                    };
                }
                random_predictor(rng, m)
            })
            .collect()
    };
    match idx % 8 {
        0 => MechanismSpec::WeakestTypeVcg {
            predictors: random_predictors(rng),
        },
        1 => MechanismSpec::ZetaLambda {
            predictors: random_predictors(rng),
            params: TuningParams {
                zeta: (0..n).map(|_| rng.gen_range(0.5..5.0)).collect(),
                lambda: (0..n).map(|_| rng.gen_range(0.1..3.0)).collect(),
            },
        },
        2 => MechanismSpec::Generalized {
            partitions: (0..n)
                .map(|_| {
                    let low = random_type(rng, m);
                    let high = low.iter().map(|v| v + rng.gen_range(0.0..10.0)).collect();
                    PartitionPredictor {
                        cells: vec![
                            PartitionCell {
                                predictor: random_predictor(rng, m),
                                density: None,
                            },
                            PartitionCell {
                                predictor: Predictor::uninformative(),
                                density: Some(CellDensity::UniformBox { low, high }),
                            },
                        ],
                        probabilities: vec![0.4, 0.6],
                    }
                })
                .collect(),
            params: TuningParams {
                zeta: (0..n).map(|_| rng.gen_range(0.5..5.0)).collect(),
                lambda: (0..n).map(|_| rng.gen_range(0.1..3.0)).collect(),
            },
        },
        3 => MechanismSpec::AffineMaximizer {
            predictors: random_predictors(rng),
            am: AmParams {
                omega: (0..n).map(|_| rng.gen_range(0.5..2.0)).collect(),
                tau: (0..m).map(|_| rng.gen_range(0.0..5.0)).collect(),
            },
        },
        4 => MechanismSpec::Groves {
            priors: (0..n)
                .map(|_| PriorModel::Discrete {
                    types: (0..3).map(|_| random_type(rng, m)).collect(),
                    probabilities: vec![0.2, 0.3, 0.5],
                })
                .collect(),
        },
        5 => MechanismSpec::Discard {
            predictors: random_predictors(rng),
            beta: 0.5,
        },
        6 => MechanismSpec::ZetaZero {
            predictors: random_predictors(rng),
            zeta: (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        },
        _ => MechanismSpec::Vcg,
    }
}

fn ic(opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut rng = opts.rng(13);
    let mut truthful = Vec::new();
    let mut pivots = Vec::new();
    let mut ir = Vec::new();
    let mut am_identity = Vec::new();
    for idx in 0..500 {
        // Every ninth instance exercises the subspace mechanism instead.
        let (profile, spec, sub) = if idx % 9 == 8 {
            let k = rng.gen_range(1..=2);
            let (profile, s) = random_subspace_instance(&mut rng, k, 16.0)?;
            (
                profile,
                MechanismSpec::Subspace { spec: s.clone() },
                Some(s),
            )
        } else {
            let profile = random_instance(&mut rng);
            let spec = ic_mechanism(&mut rng, idx, &profile);
            (profile, spec, None)
        };
        let streams = TrialStreams::new(substream_seed(opts.seed, 13, idx), 0);
        let prepared = spec.prepare(&profile)?;
        let (truth_pivots, _) = prepared.pivots(&streams)?;
        let out = prepared.run(&streams)?;
        let mut ir_ok = true;
        for (i, t) in profile.agents().iter().enumerate() {
            if out.participates(i) {
                ir_ok &= out.utility(i, t) >= -1e-9;
            } else {
                ir_ok &= out.payments[i] == 0.0;
            }
        }
        ir.push((
            idx,
            ir_ok && out.is_consistent(&profile),
            format!("{}: {out:?}", spec.name()),
        ));

        let mut ok = true;
        let mut pivot_ok = true;
        let mut detail = String::new();
        for r in 0..20 {
            let agent = rng.gen_range(0..profile.num_agents());
            let truth = &profile.agents()[agent];
            let lie = match &sub {
                Some(s) => subspace_misreport(&mut rng, s, agent),
                None => misreport(&mut rng, truth),
            };
            let lied = profile.with_replacement(agent, lie)?;
            let prepared_lie = spec.prepare(&lied)?;
            let (lie_pivots, _) = prepared_lie.pivots(&streams)?;
            if lie_pivots[agent] != truth_pivots[agent] {
                pivot_ok = false;
                detail = format!(
                    "misreport {r}: pivot {} vs {}",
                    lie_pivots[agent], truth_pivots[agent]
                );
            }
            let lie_out = prepared_lie.run(&streams)?;
            let (u_truth, u_lie) = (out.utility(agent, truth), lie_out.utility(agent, truth));
            if u_truth < u_lie - 1e-9 {
                ok = false;
                detail = format!("misreport {r}: utility {u_lie} beats truthful {u_truth}");
            }
        }
        truthful.push((idx, ok, format!("{}: {detail}", spec.name())));
        pivots.push((idx, pivot_ok, format!("{}: {detail}", spec.name())));

        if sub.is_none() {
            let predictors: Vec<Predictor> = profile
                .agents()
                .iter()
                .map(|t| Predictor::fixed(&random_polytope_around(&mut rng, t.as_slice(), 3)))
                .collect();
            let am = AmParams::unweighted(profile.num_agents(), profile.num_allocations());
            let a = weakest_type_am(&profile, &predictors, &am)?;
            let b = weakest_type_vcg(&profile, &predictors)?;
            am_identity.push((idx, a == b, format!("{a:?} vs {b:?}")));
        }
    }
    Ok(vec![
        tally(
            "truthful utility at least misreport utility (500 x 20)",
            truthful,
        ),
        tally("pivot unchanged by own report", pivots),
        tally(
            "participants have utility >= -1e-9 and excluded agents pay 0",
            ir,
        ),
        tally(
            "unit-weight affine maximizer equals weakest-type VCG exactly",
            am_identity,
        ),
    ])
}
