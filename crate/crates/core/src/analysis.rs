//! Closed-form guarantees, Monte Carlo estimation, baselines, and sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    welfare, welfare_against, AllocationSpace, MechanismOutcome, TypeProfile, TypeVector, CMP_EPS,
};
use crate::error::{Error, Result};
use crate::geometry::{LinearConstraint, Polytope, Predictor};
use crate::lp::Relation;
use crate::mechanisms::{
    assess_all, ceil_log2, ceil_log2_plus, doubling_levels, scaled_pow2, subspace_point,
    subspace_rays, vcg, weakest_type_vcg, MechanismSpec, SubspaceSpec, TuningParams,
};
use crate::streams::TrialStreams;

/// Trials per parallel work unit. Chunks are merged in index order, so the
/// result does not depend on how many threads process them.
pub const CHUNK: u64 = 1024;

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStat {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStat) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn finish(&self) -> Stat {
        let se = if self.n >= 2 {
            (self.m2.max(0.0) / (self.n - 1) as f64).sqrt() / (self.n as f64).sqrt()
        } else {
            0.0
        };
        Stat {
            mean: self.mean,
            se,
            n: self.n,
        }
    }
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

impl Verdict {
    pub fn ok(self) -> bool {
        self == Verdict::Satisfied
    }
}

/// Lower bound check at three standard errors.
pub fn verdict_at_least(stat: &Stat, bound: f64) -> Verdict {
    if stat.n < 2 {
        Verdict::Inconclusive
    } else if stat.mean + 3.0 * stat.se >= bound - CMP_EPS {
        Verdict::Satisfied
    } else {
        Verdict::Violated
    }
}

/// Two-sided agreement check at three standard errors.
pub fn verdict_matches(stat: &Stat, exact: f64) -> Verdict {
    if stat.n < 2 {
        Verdict::Inconclusive
    } else if (stat.mean - exact).abs() <= 3.0 * stat.se + CMP_EPS {
        Verdict::Satisfied
    } else {
        Verdict::Violated
    }
}

/// Runs `trial` for every trial index and accumulates each returned
/// coordinate. Deterministic in `trials` regardless of `workers`.
pub fn parallel_stats<F>(trials: u64, workers: usize, dims: usize, trial: F) -> Result<Vec<Stat>>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let chunks: Vec<u64> = (0..trials.div_ceil(CHUNK)).collect();
    let work = || -> Result<Vec<Vec<RunningStat>>> {
        chunks
            .par_iter()
            .map(|&c| {
                let mut acc = vec![RunningStat::default(); dims];
                for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                    let xs = trial(t)?;
                    for (a, x) in acc.iter_mut().zip(xs) {
                        a.push(x);
                    }
                }
                Ok(acc)
            })
            .collect()
    };
    let per_chunk = if workers == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work)?
    };
    let mut total = vec![RunningStat::default(); dims];
    for acc in &per_chunk {
        for (t, a) in total.iter_mut().zip(acc) {
            t.merge(a);
        }
    }
    Ok(total.iter().map(RunningStat::finish).collect())
}

/// Monte Carlo estimates for one mechanism on one profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub mechanism: String,
    pub trials: u64,
    pub master_seed: u64,
    pub optimal_welfare: f64,
    pub welfare: Stat,
    pub revenue: Stat,
    /// Value each agent enjoys: `θ_i[α*]` when it participates, else 0.
    pub agent_value: Vec<Stat>,
    pub agent_payment: Vec<Stat>,
    pub agent_participation: Vec<Stat>,
}

pub fn monte_carlo(
    spec: &MechanismSpec,
    profile: &TypeProfile,
    trials: u64,
    master_seed: u64,
    workers: usize,
) -> Result<MonteCarloReport> {
    let prepared = spec.prepare(profile)?;
    let n = profile.num_agents();
    let stats = parallel_stats(trials, workers, 2 + 3 * n, |t| {
        let out = prepared.run(&TrialStreams::new(master_seed, t))?;
        Ok(outcome_row(profile, &out))
    })?;
    Ok(MonteCarloReport {
        mechanism: spec.name().to_string(),
        trials,
        master_seed,
        optimal_welfare: welfare(profile).0,
        welfare: stats[0],
        revenue: stats[1],
        agent_value: stats[2..2 + n].to_vec(),
        agent_payment: stats[2 + n..2 + 2 * n].to_vec(),
        agent_participation: stats[2 + 2 * n..].to_vec(),
    })
}

fn outcome_row(profile: &TypeProfile, out: &MechanismOutcome) -> Vec<f64> {
    let n = profile.num_agents();
    let mut row = Vec::with_capacity(2 + 3 * n);
    row.push(out.welfare);
    row.push(out.revenue);
    for (i, t) in profile.agents().iter().enumerate() {
        row.push(if out.participates(i) {
            t[out.allocation]
        } else {
            0.0
        });
    }
    row.extend_from_slice(&out.payments);
    for i in 0..n {
        row.push(if out.participates(i) { 1.0 } else { 0.0 });
    }
    row
}

/// Scalar parameters of one agent under the randomized doubling rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingPoint {
    /// `θ_i[α*]`
    pub theta_star: f64,
    pub zeta: f64,
    pub lambda: f64,
    pub delta_err: f64,
    pub delta_vcg: f64,
}

impl DoublingPoint {
    pub fn k_max(&self) -> Result<u32> {
        doubling_levels(self.delta_vcg, self.zeta, self.lambda)
    }

    /// Smallest exponent at which the agent participates, capped at `K + 1`.
    pub fn first_participating(&self) -> Result<u32> {
        let k = self.k_max()?;
        Ok(ceil_log2_plus((self.zeta - self.delta_err) / self.lambda).min(k + 1))
    }

    /// Payment at exponent `k`: `θ* − Δ^err + ζ − 2^k λ`.
    pub fn payment_at(&self, k: u32) -> f64 {
        self.theta_star - self.delta_err + self.zeta - scaled_pow2(self.lambda, k as i64)
    }

    /// Whether the agent participates at exponent `k`.
    pub fn participates_at(&self, k: u32) -> bool {
        self.theta_star - self.payment_at(k) >= -CMP_EPS
    }

    /// Closed-form expected value.
    pub fn expected_value(&self) -> Result<f64> {
        let k = self.k_max()? as f64;
        let first = self.first_participating()? as f64;
        Ok((1.0 - first / (1.0 + k)) * self.theta_star)
    }

    /// Expected payment, summed over every exponent.
    pub fn exact_expected_payment(&self) -> Result<f64> {
        let k = self.k_max()?;
        let total: f64 = (0..=k)
            .filter(|&j| self.participates_at(j))
            .map(|j| self.payment_at(j))
            .sum();
        Ok(total / (1.0 + k as f64))
    }

    /// Expected value, summed over every exponent.
    pub fn exact_expected_value(&self) -> Result<f64> {
        let k = self.k_max()?;
        let count = (0..=k).filter(|&j| self.participates_at(j)).count();
        Ok(count as f64 * self.theta_star / (1.0 + k as f64))
    }

    /// Lower bound on the expected payment.
    pub fn payment_lower_bound(&self) -> Result<f64> {
        let k = self.k_max()? as f64;
        let first = self.first_participating()? as f64;
        let factor = 1.0 - first / (1.0 + k);
        Ok(factor * (self.theta_star - (self.delta_err - self.zeta))
            - 4.0 * (self.delta_vcg + self.zeta) / (1.0 + k))
    }
}

pub fn thm5_expected_value(
    theta_star: f64,
    zeta: f64,
    lambda: f64,
    delta_err: f64,
    delta_vcg: f64,
) -> Result<f64> {
    DoublingPoint {
        theta_star,
        zeta,
        lambda,
        delta_err,
        delta_vcg,
    }
    .expected_value()
}

pub fn thm6_payment_lower_bound(
    theta_star: f64,
    zeta: f64,
    lambda: f64,
    delta_err: f64,
    delta_vcg: f64,
) -> Result<f64> {
    DoublingPoint {
        theta_star,
        zeta,
        lambda,
        delta_err,
        delta_vcg,
    }
    .payment_lower_bound()
}

pub fn exact_expected_payment(
    theta_star: f64,
    zeta: f64,
    lambda: f64,
    delta_err: f64,
    delta_vcg: f64,
) -> Result<f64> {
    DoublingPoint {
        theta_star,
        zeta,
        lambda,
        delta_err,
        delta_vcg,
    }
    .exact_expected_payment()
}

/// `1 + ⌈log2(1 + Δ^VCG)⌉`, the default-tuning degradation factor.
pub fn default_tuning_denominator(delta_vcg: f64) -> u32 {
    1 + ceil_log2(1.0 + delta_vcg.max(0.0)).max(0) as u32
}

/// Consistency and robustness ratios of the default tuning `ζ = λ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefaultTuningRatios {
    pub welfare_consistency: f64,
    pub revenue_consistency: f64,
    pub welfare_robustness: f64,
    pub revenue_robustness: f64,
    pub denominator: u32,
}

pub fn thm7_consistency_robustness(delta_vcg: &[f64]) -> DefaultTuningRatios {
    let denominator = delta_vcg
        .iter()
        .map(|d| default_tuning_denominator(*d))
        .max()
        .unwrap_or(1);
    let r = 1.0 / denominator as f64;
    DefaultTuningRatios {
        welfare_consistency: 1.0,
        revenue_consistency: r,
        welfare_robustness: r,
        revenue_robustness: r,
        denominator,
    }
}

/// Per-agent guarantees of the doubling rule next to Monte Carlo estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentGuarantee {
    pub point: DoublingPoint,
    pub k_max: u32,
    pub expected_value: f64,
    pub exact_expected_payment: f64,
    pub payment_lower_bound: f64,
    pub empirical_value: Stat,
    pub empirical_payment: Stat,
    pub value_verdict: Verdict,
    pub payment_verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub agents: Vec<AgentGuarantee>,
    pub welfare_bound: f64,
    pub revenue_bound: f64,
    pub empirical_welfare: Stat,
    pub empirical_revenue: Stat,
    pub welfare_verdict: Verdict,
    pub revenue_verdict: Verdict,
    pub trials: u64,
}

impl GuaranteeReport {
    pub fn all_satisfied(&self) -> bool {
        self.welfare_verdict.ok()
            && self.revenue_verdict.ok()
            && self
                .agents
                .iter()
                .all(|a| a.value_verdict.ok() && a.payment_verdict.ok())
    }
}

/// Evaluates the doubling rule's value and payment guarantees on a profile.
pub fn guarantee_report(
    profile: &TypeProfile,
    predictors: &[Predictor],
    params: &TuningParams,
    trials: u64,
    master_seed: u64,
    workers: usize,
) -> Result<GuaranteeReport> {
    let assessments = assess_all(profile, predictors)?;
    let spec = MechanismSpec::ZetaLambda {
        predictors: predictors.to_vec(),
        params: params.clone(),
    };
    let mc = monte_carlo(&spec, profile, trials, master_seed, workers)?;
    let allocation = welfare(profile).1;
    let mut agents = Vec::with_capacity(assessments.len());
    for (i, a) in assessments.iter().enumerate() {
        let point = DoublingPoint {
            theta_star: profile.agents()[i][allocation],
            zeta: params.zeta[i],
            lambda: params.lambda[i],
            delta_err: a.measures.delta_err,
            delta_vcg: a.measures.delta_vcg,
        };
        let expected_value = point.expected_value()?;
        let payment_lower_bound = point.payment_lower_bound()?;
        agents.push(AgentGuarantee {
            point,
            k_max: point.k_max()?,
            expected_value,
            exact_expected_payment: point.exact_expected_payment()?,
            payment_lower_bound,
            empirical_value: mc.agent_value[i],
            empirical_payment: mc.agent_payment[i],
            value_verdict: verdict_matches(&mc.agent_value[i], expected_value),
            payment_verdict: verdict_at_least(&mc.agent_payment[i], payment_lower_bound),
        });
    }
    let welfare_bound = agents.iter().map(|a| a.expected_value).sum();
    let revenue_bound = agents.iter().map(|a| a.payment_lower_bound).sum();
    Ok(GuaranteeReport {
        welfare_verdict: verdict_matches(&mc.welfare, welfare_bound),
        revenue_verdict: verdict_at_least(&mc.revenue, revenue_bound),
        agents,
        welfare_bound,
        revenue_bound,
        empirical_welfare: mc.welfare,
        empirical_revenue: mc.revenue,
        trials,
    })
}

/// Weakest-type prices with complete trust in the predictions.
pub fn baseline_trust(profile: &TypeProfile, predictors: &[Predictor]) -> Result<MechanismOutcome> {
    weakest_type_vcg(profile, predictors)
}

/// With probability `beta` charge vanilla VCG prices, otherwise trust.
pub fn baseline_discard(
    profile: &TypeProfile,
    predictors: &[Predictor],
    beta: f64,
    streams: &TrialStreams,
) -> Result<MechanismOutcome> {
    MechanismSpec::Discard {
        predictors: predictors.to_vec(),
        beta,
    }
    .prepare(profile)?
    .run(streams)
}

/// Expected `(welfare, revenue)` of [`baseline_discard`], by its two branches.
pub fn discard_expectation(
    profile: &TypeProfile,
    predictors: &[Predictor],
    beta: f64,
) -> Result<(f64, f64)> {
    let (opt, allocation) = welfare(profile);
    let vcg_revenue = vcg(profile).revenue;
    let mut trusted_welfare = 0.0;
    let mut trusted_revenue = 0.0;
    for (i, a) in assess_all(profile, predictors)?.iter().enumerate() {
        if a.measures.delta_err >= -CMP_EPS {
            let v = profile.agents()[i][allocation];
            trusted_welfare += v;
            trusted_revenue += v - a.measures.delta_err;
        }
    }
    Ok((
        beta * opt + (1.0 - beta) * trusted_welfare,
        beta * vcg_revenue + (1.0 - beta) * trusted_revenue,
    ))
}

/// Two-agent, two-allocation profile whose focal agent 0 has the given
/// `θ*`, `Δ^err` and `Δ^VCG` under the returned predictor.
///
/// Agent 0 has type `(θ*, 0)` and the other agent `(c, b)` with `b = θ*` and
/// `c = Δ^err + Δ^VCG`; agent 0's predictor is `θ̃[0] ≥ Δ^VCG + b − c`.
/// Requires `Δ^VCG ≥ 0` and `0 ≤ Δ^err + Δ^VCG ≤ θ*`.
pub fn scalar_instance(
    theta_star: f64,
    delta_err: f64,
    delta_vcg: f64,
) -> Result<(TypeProfile, Vec<Predictor>)> {
    let c = delta_err + delta_vcg;
    if !(delta_vcg >= 0.0 && c >= 0.0 && c <= theta_star && theta_star.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "no two-allocation instance with theta*={theta_star}, delta_err={delta_err}, delta_vcg={delta_vcg}"
        )));
    }
    let b = theta_star;
    let space = AllocationSpace::new(vec!["focal".into(), "other".into()])?;
    let profile = TypeProfile::new(
        space,
        vec![
            TypeVector::new(vec![theta_star, 0.0])?,
            TypeVector::new(vec![c, b])?,
        ],
    )?;
    let focal = Polytope::new(vec![LinearConstraint::single(
        0,
        Relation::Ge,
        delta_vcg + b - c,
    )]);
    Ok((
        profile,
        vec![Predictor::fixed(&focal), Predictor::uninformative()],
    ))
}

/// Exact expected `(value, payment)` per agent of the subspace mechanism,
/// by enumerating every level and every level tuple.
pub fn subspace_expectations(
    profile: &TypeProfile,
    spec: &SubspaceSpec,
) -> Result<Vec<(f64, f64)>> {
    let levels = spec.levels()?;
    // Validates the profile against the spec.
    MechanismSpec::Subspace { spec: spec.clone() }.prepare(profile)?;
    let allocation = welfare(profile).1;
    let mut result = Vec::with_capacity(profile.num_agents());
    for (i, t) in profile.agents().iter().enumerate() {
        let others = profile.others_sum(i)?;
        let offset = others[allocation];
        let rays = subspace_rays(&spec.bases[i], spec.value_bound);
        let k = rays.len();
        let (mut value, mut payment) = (0.0, 0.0);
        for level in 1..=levels {
            let tuples: Vec<Vec<u32>> = level_tuples(k, level, levels)
                .into_iter()
                .filter(|t| t.iter().min() == Some(&level))
                .collect();
            let weight = 1.0 / (levels as f64 * tuples.len() as f64);
            for tuple in &tuples {
                let pivot = welfare_against(&others, &subspace_point(&rays, tuple)).0;
                let p = pivot - offset;
                if t[allocation] - p >= -CMP_EPS {
                    value += weight * t[allocation];
                    payment += weight * p;
                }
            }
        }
        result.push((value, payment));
    }
    Ok(result)
}

/// Every tuple in `{low..=high}^k`.
fn level_tuples(k: usize, low: u32, high: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| {
                (low..=high).map(move |l| {
                    let mut t = t.clone();
                    t.push(l);
                    t
                })
            })
            .collect();
    }
    out
}

/// Parameter swept along the horizontal axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Zeta,
    DeltaErr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub theta_star: f64,
    pub delta_vcg: f64,
    /// Fixed `Δ^err` when sweeping `ζ`.
    #[serde(default)]
    pub delta_err: f64,
    /// Fixed `ζ` when sweeping `Δ^err`.
    #[serde(default)]
    pub zeta: f64,
    /// Monte Carlo trials per row; 0 skips the empirical columns.
    #[serde(default)]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub lambda: f64,
    pub expected_value: f64,
    pub expected_payment: f64,
    pub empirical_value: Option<f64>,
    pub empirical_payment: Option<f64>,
    /// Standard error of the empirical payment.
    pub se: Option<f64>,
}

/// Seed for one sweep row, independent of how rows are scheduled.
fn row_seed(seed: u64, row: usize) -> u64 {
    seed ^ (row as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One row per `(λ, value)` pair, ordered by `λ` then by swept value.
pub fn sweep_rows(config: &SweepConfig, workers: usize) -> Result<Vec<SweepRow>> {
    if config.values.is_empty() || config.lambdas.is_empty() {
        return Err(Error::InvalidParameter("sweep range is empty".into()));
    }
    let mut values = config.values.clone();
    values.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(values.len() * config.lambdas.len());
    for &lambda in &config.lambdas {
        for &v in &values {
            let (zeta, delta_err) = match config.axis {
                SweepAxis::Zeta => (v, config.delta_err),
                SweepAxis::DeltaErr => (config.zeta, v),
            };
            let point = DoublingPoint {
                theta_star: config.theta_star,
                zeta,
                lambda,
                delta_err,
                delta_vcg: config.delta_vcg,
            };
            let mut row = SweepRow {
                param: v,
                lambda,
                expected_value: point.expected_value()?,
                expected_payment: point.exact_expected_payment()?,
                empirical_value: None,
                empirical_payment: None,
                se: None,
            };
            if config.trials > 0 {
                let (profile, predictors) =
                    scalar_instance(config.theta_star, delta_err, config.delta_vcg)?;
                let params = TuningParams {
                    zeta: vec![zeta, 1.0],
                    lambda: vec![lambda, 1.0],
                };
                let spec = MechanismSpec::ZetaLambda { predictors, params };
                let mc = monte_carlo(
                    &spec,
                    &profile,
                    config.trials,
                    row_seed(config.seed, rows.len()),
                    workers,
                )?;
                row.empirical_value = Some(mc.agent_value[0].mean);
                row.empirical_payment = Some(mc.agent_payment[0].mean);
                row.se = Some(mc.agent_payment[0].se);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: [&str; 7] = [
    "param",
    "lambda",
    "expected_value",
    "expected_payment",
    "empirical_value",
    "empirical_payment",
    "se",
];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER).map_err(io)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.param.to_string(),
            r.lambda.to_string(),
            r.expected_value.to_string(),
            r.expected_payment.to_string(),
            opt(r.empirical_value),
            opt(r.empirical_payment),
            opt(r.se),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Validation(format!("csv: {e}")))?;
    Ok(())
}

/// Rows grouped by `λ` (bit pattern keeps grouping exact).
pub fn rows_by_lambda(rows: &[SweepRow]) -> Vec<(f64, Vec<&SweepRow>)> {
    let mut groups: BTreeMap<u64, Vec<&SweepRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = r.lambda.to_bits();
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| (f64::from_bits(k), groups.remove(&k).unwrap()))
        .collect()
}

/// Line chart of expected value and payment (plus empirical markers) for
/// one `λ`.
pub fn sweep_svg(rows: &[&SweepRow], title: &str, x_label: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let xs: Vec<f64> = rows.iter().map(|r| r.param).collect();
    let mut ys: Vec<f64> = rows
        .iter()
        .flat_map(|r| [r.expected_value, r.expected_payment])
        .collect();
    ys.extend(rows.iter().filter_map(|r| r.empirical_payment));
    ys.extend(rows.iter().filter_map(|r| r.empirical_value));
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let y0 = y0.min(0.0);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for t in 0..=4 {
        let fx = x0 + (x1 - x0) * t as f64 / 4.0;
        let fy = y0 + (y1 - y0) * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(fx),
            H - PAD + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD - 6.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    type Series = (&'static str, &'static str, fn(&SweepRow) -> f64);
    let series: [Series; 2] = [
        ("expected value", "#1f77b4", |r| r.expected_value),
        ("expected payment", "#d62728", |r| r.expected_payment),
    ];
    for (k, (name, color, get)) in series.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.param), sy(get(r))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{a}" y1="{ly}" x2="{b}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{c}" y="{t}">{name}</text>"#,
            a = W - PAD - 150.0,
            b = W - PAD - 130.0,
            c = W - PAD - 124.0,
            t = ly + 4.0
        );
    }
    for r in rows {
        if let Some(v) = r.empirical_value {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f77b4" fill-opacity="0.5"/>"##,
                sx(r.param),
                sy(v)
            );
        }
        if let Some(p) = r.empirical_payment {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#d62728" fill-opacity="0.5"/>"##,
                sx(r.param),
                sy(p)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
