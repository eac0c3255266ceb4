//! Payment and allocation rules.
//!
//! Every mechanism here is a Groves mechanism: it picks an allocation and
//! charges agent `i` a pivot `h_i` minus the others' value at that
//! allocation. The pivot never depends on agent `i`'s own report. Agents
//! whose resulting utility is negative are excluded and pay nothing.
//!
//! Mechanisms are evaluated in two steps. [`MechanismSpec::prepare`] does the
//! deterministic work for a profile (LPs over predictor polytopes) and
//! [`PreparedMechanism::run`] performs the random draws for one trial.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    argmax_lowest, welfare, welfare_against, Draws, MechanismOutcome, TypeProfile, CMP_EPS,
};
use crate::error::{Error, Result};
use crate::geometry::{
    assess, minimize_max_lp, Assessment, MinMaxTarget, PartitionPredictor, Predictor,
    PreparedPartition,
};
use crate::streams::TrialStreams;

/// Per-agent offset `ζ_i` and step `λ_i` of the randomized doubling rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    pub zeta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl TuningParams {
    pub fn uniform(agents: usize, zeta: f64, lambda: f64) -> Self {
        Self {
            zeta: vec![zeta; agents],
            lambda: vec![lambda; agents],
        }
    }

    fn validate(&self, agents: usize) -> Result<()> {
        if self.zeta.len() != agents || self.lambda.len() != agents {
            return Err(Error::InvalidParameter(format!(
                "need one zeta and one lambda per agent ({agents})"
            )));
        }
        if self.zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidParameter("zeta must be finite".into()));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {l}"
            )));
        }
        Ok(())
    }
}

/// `2^k` for `k` in the normal exponent range.
fn pow2(k: i64) -> f64 {
    let k = k.clamp(-1022, 1023);
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// `λ · 2^k`, exact whenever the result is a normal number.
pub fn scaled_pow2(lambda: f64, k: i64) -> f64 {
    let half = k / 2;
    lambda * pow2(half) * pow2(k - half)
}

/// Smallest integer `k` with `2^k >= x`, for finite `x > 0`.
pub fn ceil_log2(x: f64) -> i64 {
    debug_assert!(x > 0.0 && x.is_finite());
    let mut k = x.log2().ceil() as i64;
    while scaled_pow2(1.0, k) < x {
        k += 1;
    }
    while scaled_pow2(1.0, k - 1) >= x {
        k -= 1;
    }
    k
}

/// `⌈log2⁺ x⌉`: zero for `x < 1`.
pub fn ceil_log2_plus(x: f64) -> u32 {
    if x < 1.0 {
        0
    } else {
        ceil_log2(x).max(0) as u32
    }
}

/// Largest doubling exponent `K = max(0, ⌈log2((Δ^VCG + ζ)/λ)⌉)`.
pub fn doubling_levels(delta_vcg: f64, zeta: f64, lambda: f64) -> Result<u32> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let span = delta_vcg + zeta;
    if span.is_nan() || span <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "delta_vcg + zeta must be positive, got {span}"
        )));
    }
    let ratio = span / lambda;
    if !ratio.is_finite() {
        return Err(Error::InvalidParameter(
            "(delta_vcg + zeta) / lambda overflows".into(),
        ));
    }
    Ok(ceil_log2(ratio).max(0) as u32)
}

/// `Σ_{j≠agent} θ_j[allocation]`.
pub fn others_at(profile: &TypeProfile, agent: usize, allocation: usize) -> f64 {
    profile
        .agents()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != agent)
        .map(|(_, t)| t[allocation])
        .sum()
}

/// Charges `(pivot_i − offset_i) / weight_i` and excludes agents left with
/// negative utility.
fn settle(
    profile: &TypeProfile,
    allocation: usize,
    pivots: &[f64],
    offsets: &[f64],
    weights: Option<&[f64]>,
    draws: Draws,
) -> MechanismOutcome {
    let mut payments = Vec::with_capacity(pivots.len());
    let mut participating = Vec::with_capacity(pivots.len());
    for (i, t) in profile.agents().iter().enumerate() {
        let p = match weights {
            Some(w) => (pivots[i] - offsets[i]) / w[i],
            None => pivots[i] - offsets[i],
        };
        participating.push(t[allocation] - p >= -CMP_EPS);
        payments.push(p);
    }
    MechanismOutcome::settle(profile, allocation, payments, &participating, draws)
}

fn check_len<T>(items: &[T], agents: usize, what: &str) -> Result<()> {
    if items.len() != agents {
        return Err(Error::InvalidParameter(format!(
            "need one {what} per agent: got {}, expected {agents}",
            items.len()
        )));
    }
    Ok(())
}

/// Assessment of every agent's predictor.
pub fn assess_all(profile: &TypeProfile, predictors: &[Predictor]) -> Result<Vec<Assessment>> {
    check_len(predictors, profile.num_agents(), "predictor")?;
    predictors
        .iter()
        .enumerate()
        .map(|(i, p)| assess(&p.build(profile, i)?, profile, i))
        .collect()
}

/// Values on the subspace mechanism's per-agent basis, plus the value bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSpec {
    /// `bases[i]` holds agent `i`'s orthonormal, non-negative basis vectors.
    pub bases: Vec<Vec<Vec<f64>>>,
    /// Upper bound `H` on every value; a power of two, at least 2.
    pub value_bound: f64,
}

impl SubspaceSpec {
    /// `log2 H`.
    pub fn levels(&self) -> Result<u32> {
        let h = self.value_bound;
        if !(h.is_finite() && h >= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "value bound {h} must be at least 2"
            )));
        }
        let a = h.log2().round() as i64;
        if scaled_pow2(1.0, a) != h {
            return Err(Error::InvalidParameter(format!(
                "value bound {h} is not a power of two"
            )));
        }
        Ok(a as u32)
    }

    fn validate_basis(&self, agent: usize, dim: usize) -> Result<()> {
        let basis = &self.bases[agent];
        if basis.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "agent {agent} has an empty basis"
            )));
        }
        for (j, u) in basis.iter().enumerate() {
            if u.len() != dim {
                return Err(Error::InvalidParameter(format!(
                    "basis vector {j} of agent {agent} has wrong dimension"
                )));
            }
            if u.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Validation(format!(
                    "basis vector {j} of agent {agent} has a negative entry"
                )));
            }
            for (l, v) in basis.iter().enumerate().skip(j) {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let expected = if l == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "basis of agent {agent} is not orthonormal (<u{j}, u{l}> = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Rescaled basis vectors `u·H/‖u‖∞`, one per basis vector.
pub fn subspace_rays(basis: &[Vec<f64>], value_bound: f64) -> Vec<Vec<f64>> {
    basis
        .iter()
        .map(|u| {
            let sup = u.iter().fold(0.0f64, |m, v| m.max(*v));
            u.iter().map(|v| v * value_bound / sup).collect()
        })
        .collect()
}

/// `Σ_j rays[j] / 2^{levels[j]}`.
pub fn subspace_point(rays: &[Vec<f64>], levels: &[u32]) -> Vec<f64> {
    let mut point = vec![0.0; rays[0].len()];
    for (ray, &l) in rays.iter().zip(levels) {
        let f = scaled_pow2(1.0, -(l as i64));
        for (p, r) in point.iter_mut().zip(ray) {
            *p += r * f;
        }
    }
    point
}

/// Distance from `point` to the span of an orthonormal basis.
pub fn subspace_residual(basis: &[Vec<f64>], point: &[f64]) -> f64 {
    let mut residual = point.to_vec();
    for u in basis {
        let c: f64 = u.iter().zip(point).map(|(a, b)| a * b).sum();
        for (r, v) in residual.iter_mut().zip(u) {
            *r -= c * v;
        }
    }
    residual.iter().map(|r| r * r).sum::<f64>().sqrt()
}

/// Distribution of a single bidder's value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDistribution {
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
}

impl ValueDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ValueDistribution::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low >= 0.0 && high > low
            }
            ValueDistribution::Exponential { rate } => rate.is_finite() && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "malformed distribution {self:?}"
            )))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ValueDistribution::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            ValueDistribution::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-rate * x).exp()
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ValueDistribution::Uniform { low, high } => {
                if (low..=high).contains(&x) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            ValueDistribution::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
        }
    }

    /// Finite interval carrying all but a negligible tail of the mass.
    pub fn effective_support(&self) -> (f64, f64) {
        match *self {
            ValueDistribution::Uniform { low, high } => (low, high),
            ValueDistribution::Exponential { rate } => (0.0, 30.0 / rate),
        }
    }

    /// `φ(x) = x − (1 − F(x)) / f(x)`.
    pub fn virtual_value(&self, x: f64) -> f64 {
        match *self {
            // Closed form avoids dividing by a vanishing tail density.
            ValueDistribution::Exponential { rate } => x - 1.0 / rate,
            _ => x - (1.0 - self.cdf(x)) / self.pdf(x),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ValueDistribution::Uniform { low, high } => rng.gen_range(low..high),
            ValueDistribution::Exponential { rate } => {
                let u: f64 = rng.gen();
                -(1.0 - u).ln() / rate
            }
        }
    }

    /// Checks that the virtual value is non-decreasing on a grid.
    pub fn check_regular(&self) -> Result<()> {
        self.validate()?;
        let (lo, hi) = self.effective_support();
        const GRID: usize = 1000;
        let mut prev = f64::NEG_INFINITY;
        for s in 1..GRID {
            let x = lo + (hi - lo) * s as f64 / GRID as f64;
            let phi = self.virtual_value(x);
            if phi < prev - 1e-9 * (1.0 + prev.abs()) {
                return Err(Error::Validation(format!(
                    "virtual value decreases near {x}; prior is not regular"
                )));
            }
            prev = phi;
        }
        Ok(())
    }

    /// Zero of the virtual value (the optimal reserve), by bisection.
    pub fn reserve_price(&self) -> Result<f64> {
        self.check_regular()?;
        let (mut lo, mut hi) = self.effective_support();
        if self.virtual_value(lo) >= 0.0 {
            return Ok(lo);
        }
        if self.virtual_value(hi) <= 0.0 {
            return Ok(hi);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.virtual_value(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Prior over one agent's type, used to choose a revenue-maximizing pivot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorModel {
    Discrete {
        types: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    },
    /// Single item, every bidder's value drawn iid from `distribution`.
    SingleItemIid { distribution: ValueDistribution },
}

/// Checks the single-item layout: allocation 0 is "unsold" and allocation
/// `j + 1` gives the item to bidder `j`; returns the bids.
pub fn single_item_bids(profile: &TypeProfile) -> Result<Vec<f64>> {
    let n = profile.num_agents();
    if profile.num_allocations() != n + 1 {
        return Err(Error::Validation(format!(
            "single-item profile needs {} allocations, found {}",
            n + 1,
            profile.num_allocations()
        )));
    }
    profile
        .agents()
        .iter()
        .enumerate()
        .map(|(j, t)| {
            if t.as_slice()
                .iter()
                .enumerate()
                .any(|(a, v)| a != j + 1 && *v != 0.0)
            {
                Err(Error::Validation(format!(
                    "bidder {j} values an allocation where it does not win"
                )))
            } else {
                Ok(t[j + 1])
            }
        })
        .collect()
}

/// Payment-maximizing pivot `h_i(θ_{-i})` under a prior on agent `i`.
pub fn groves_optimal_pivot(
    prior: &PriorModel,
    profile: &TypeProfile,
    agent: usize,
) -> Result<f64> {
    profile.check_agent(agent)?;
    match prior {
        PriorModel::Discrete {
            types,
            probabilities,
        } => {
            if types.is_empty() || types.len() != probabilities.len() {
                return Err(Error::InvalidParameter(
                    "discrete prior needs a non-empty support with one probability per type".into(),
                ));
            }
            let total: f64 = probabilities.iter().sum();
            if probabilities.iter().any(|q| !(q.is_finite() && *q >= 0.0))
                || (total - 1.0).abs() > CMP_EPS
            {
                return Err(Error::InvalidParameter(
                    "prior probabilities must be >= 0 and sum to 1".into(),
                ));
            }
            let others = profile.others_sum(agent)?;
            // (own value at the efficient allocation, welfare) per support type
            let support: Vec<(f64, f64)> = types
                .iter()
                .map(|t| {
                    if t.len() != others.len() || t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return Err(Error::InvalidParameter("malformed prior type".into()));
                    }
                    let (w, a) = welfare_against(&others, t);
                    Ok((t[a], w))
                })
                .collect::<Result<_>>()?;
            let mut candidates: Vec<f64> = support.iter().map(|s| s.1).collect();
            candidates.sort_by(f64::total_cmp);
            let mut best = (f64::NEG_INFINITY, candidates[0]);
            for &w in &candidates {
                let revenue = expected_groves_revenue(&support, probabilities, w);
                if revenue > best.0 + 1e-12 {
                    best = (revenue, w);
                }
            }
            Ok(best.1)
        }
        PriorModel::SingleItemIid { distribution } => {
            let bids = single_item_bids(profile)?;
            let reserve = distribution.reserve_price()?;
            let top_other = bids
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != agent)
                .map(|(_, b)| *b)
                .fold(0.0, f64::max);
            Ok(top_other.max(reserve))
        }
    }
}

/// Expected payment from agent `i` when its pivot is `pivot`, given
/// `(own value at efficient allocation, welfare)` per support type.
pub fn expected_groves_revenue(support: &[(f64, f64)], probabilities: &[f64], pivot: f64) -> f64 {
    support
        .iter()
        .zip(probabilities)
        .filter(|((_, w), _)| pivot <= *w + CMP_EPS)
        .map(|((v, w), q)| q * (v - w + pivot))
        .sum()
}

/// Agent weights and allocation boosts of an affine maximizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmParams {
    pub omega: Vec<f64>,
    pub tau: Vec<f64>,
}

impl AmParams {
    pub fn unweighted(agents: usize, allocations: usize) -> Self {
        Self {
            omega: vec![1.0; agents],
            tau: vec![0.0; allocations],
        }
    }

    fn validate(&self, profile: &TypeProfile) -> Result<()> {
        check_len(&self.omega, profile.num_agents(), "weight")?;
        if self.tau.len() != profile.num_allocations() {
            return Err(Error::InvalidParameter(
                "need one boost per allocation".into(),
            ));
        }
        if let Some(w) = self.omega.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weights must be positive, got {w}"
            )));
        }
        if self.tau.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParameter(
                "boosts must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// `Σ_{j≠skip} ω_j θ_j[α] + τ(α)` for every allocation.
    fn scores(&self, profile: &TypeProfile, skip: Option<usize>) -> Vec<f64> {
        let mut acc = vec![0.0; profile.num_allocations()];
        for (j, t) in profile.agents().iter().enumerate() {
            if Some(j) == skip {
                continue;
            }
            for (s, v) in acc.iter_mut().zip(t.as_slice()) {
                *s += self.omega[j] * v;
            }
        }
        for (s, t) in acc.iter_mut().zip(&self.tau) {
            *s += t;
        }
        acc
    }
}

/// A mechanism together with its predictors and parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum MechanismSpec {
    Vcg,
    WeakestTypeVcg {
        predictors: Vec<Predictor>,
    },
    ZetaZero {
        predictors: Vec<Predictor>,
        zeta: Vec<f64>,
    },
    ZetaLambda {
        predictors: Vec<Predictor>,
        params: TuningParams,
    },
    Generalized {
        partitions: Vec<PartitionPredictor>,
        params: TuningParams,
    },
    Subspace {
        spec: SubspaceSpec,
    },
    Groves {
        priors: Vec<PriorModel>,
    },
    AffineMaximizer {
        predictors: Vec<Predictor>,
        am: AmParams,
    },
    /// Weakest-type prices, fully trusting the predictions.
    Trust {
        predictors: Vec<Predictor>,
    },
    /// With probability `beta` charge vanilla VCG prices, otherwise trust.
    Discard {
        predictors: Vec<Predictor>,
        beta: f64,
    },
}

impl MechanismSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MechanismSpec::Vcg => "vcg",
            MechanismSpec::WeakestTypeVcg { .. } => "weakest_type_vcg",
            MechanismSpec::ZetaZero { .. } => "zeta_zero",
            MechanismSpec::ZetaLambda { .. } => "zeta_lambda",
            MechanismSpec::Generalized { .. } => "generalized",
            MechanismSpec::Subspace { .. } => "subspace",
            MechanismSpec::Groves { .. } => "groves",
            MechanismSpec::AffineMaximizer { .. } => "affine_maximizer",
            MechanismSpec::Trust { .. } => "trust",
            MechanismSpec::Discard { .. } => "discard",
        }
    }

    /// Whether runs depend on random draws.
    pub fn is_randomized(&self) -> bool {
        matches!(
            self,
            MechanismSpec::ZetaLambda { .. }
                | MechanismSpec::Generalized { .. }
                | MechanismSpec::Subspace { .. }
                | MechanismSpec::Discard { .. }
        )
    }

    pub fn prepare(&self, profile: &TypeProfile) -> Result<PreparedMechanism> {
        let n = profile.num_agents();
        let (_, efficient) = welfare(profile);
        let offsets = |allocation: usize| -> Vec<f64> {
            (0..n).map(|i| others_at(profile, i, allocation)).collect()
        };
        let baseline_welfare = || -> Result<Vec<f64>> {
            (0..n)
                .map(|i| Ok(argmax_lowest(&profile.others_sum(i)?).0))
                .collect()
        };
        let min_welfares = |predictors: &[Predictor]| -> Result<Vec<f64>> {
            Ok(assess_all(profile, predictors)?
                .into_iter()
                .map(|a| a.weakest.welfare)
                .collect())
        };
        let mut allocation = efficient;
        let mut weights = None;
        let rule = match self {
            MechanismSpec::Vcg => Rule::Fixed {
                pivots: baseline_welfare()?,
            },
            MechanismSpec::WeakestTypeVcg { predictors } | MechanismSpec::Trust { predictors } => {
                Rule::Fixed {
                    pivots: min_welfares(predictors)?,
                }
            }
            MechanismSpec::ZetaZero { predictors, zeta } => {
                check_len(zeta, n, "zeta")?;
                if zeta.iter().any(|z| !z.is_finite()) {
                    return Err(Error::InvalidParameter("zeta must be finite".into()));
                }
                let mins = min_welfares(predictors)?;
                Rule::Fixed {
                    pivots: mins.iter().zip(zeta).map(|(m, z)| m + z).collect(),
                }
            }
            MechanismSpec::ZetaLambda { predictors, params } => {
                params.validate(n)?;
                let assessments = assess_all(profile, predictors)?;
                let mut anchors = Vec::with_capacity(n);
                let mut k_max = Vec::with_capacity(n);
                for (i, a) in assessments.iter().enumerate() {
                    k_max.push(doubling_levels(
                        a.measures.delta_vcg,
                        params.zeta[i],
                        params.lambda[i],
                    )?);
                    anchors.push(a.weakest.welfare + params.zeta[i]);
                }
                Rule::Doubling {
                    anchors,
                    lambda: params.lambda.clone(),
                    k_max,
                }
            }
            MechanismSpec::Generalized { partitions, params } => {
                params.validate(n)?;
                check_len(partitions, n, "partition predictor")?;
                let prepared = partitions
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p.prepare(profile, i))
                    .collect::<Result<Vec<_>>>()?;
                Rule::Generalized {
                    partitions: prepared,
                    params: params.clone(),
                    baseline_welfare: baseline_welfare()?,
                }
            }
            MechanismSpec::Subspace { spec } => {
                let levels = spec.levels()?;
                check_len(&spec.bases, n, "basis")?;
                let h = spec.value_bound;
                let mut rays = Vec::with_capacity(n);
                for (i, t) in profile.agents().iter().enumerate() {
                    spec.validate_basis(i, profile.num_allocations())?;
                    if let Some(v) = t.as_slice().iter().find(|v| !(1.0..=h).contains(*v)) {
                        return Err(Error::Validation(format!(
                            "agent {i} value {v} lies outside [1, {h}]"
                        )));
                    }
                    let residual = subspace_residual(&spec.bases[i], t.as_slice());
                    if residual > 1e-6 {
                        return Err(Error::Validation(format!(
                            "agent {i} type is {residual} away from its subspace"
                        )));
                    }
                    rays.push(subspace_rays(&spec.bases[i], h));
                }
                Rule::Subspace {
                    rays,
                    levels,
                    others: (0..n)
                        .map(|i| profile.others_sum(i))
                        .collect::<Result<_>>()?,
                }
            }
            MechanismSpec::Groves { priors } => {
                check_len(priors, n, "prior")?;
                Rule::Fixed {
                    pivots: priors
                        .iter()
                        .enumerate()
                        .map(|(i, p)| groves_optimal_pivot(p, profile, i))
                        .collect::<Result<_>>()?,
                }
            }
            MechanismSpec::AffineMaximizer { predictors, am } => {
                am.validate(profile)?;
                check_len(predictors, n, "predictor")?;
                allocation = argmax_lowest(&am.scores(profile, None)).1;
                let mut pivots = Vec::with_capacity(n);
                let mut am_offsets = Vec::with_capacity(n);
                for (i, predictor) in predictors.iter().enumerate() {
                    let target = MinMaxTarget {
                        baseline: am.scores(profile, Some(i)),
                        scale: am.omega[i],
                    };
                    let polytope = predictor.build(profile, i)?;
                    pivots.push(minimize_max_lp(&polytope, &target)?.welfare);
                    am_offsets.push(target.baseline[allocation]);
                }
                weights = Some(am.omega.clone());
                return Ok(PreparedMechanism {
                    profile: profile.clone(),
                    allocation,
                    offsets: am_offsets,
                    weights,
                    rule: Rule::Fixed { pivots },
                });
            }
            MechanismSpec::Discard { predictors, beta } => {
                if !(0.0..=1.0).contains(beta) {
                    return Err(Error::InvalidParameter(format!(
                        "beta {beta} must lie in [0, 1]"
                    )));
                }
                Rule::Discard {
                    beta: *beta,
                    vcg: baseline_welfare()?,
                    trust: min_welfares(predictors)?,
                }
            }
        };
        Ok(PreparedMechanism {
            profile: profile.clone(),
            allocation,
            offsets: offsets(allocation),
            weights,
            rule,
        })
    }
}

#[derive(Clone, Debug)]
enum Rule {
    Fixed {
        pivots: Vec<f64>,
    },
    Doubling {
        /// `min-welfare + ζ_i`
        anchors: Vec<f64>,
        lambda: Vec<f64>,
        k_max: Vec<u32>,
    },
    Generalized {
        partitions: Vec<PreparedPartition>,
        params: TuningParams,
        baseline_welfare: Vec<f64>,
    },
    Subspace {
        rays: Vec<Vec<Vec<f64>>>,
        levels: u32,
        others: Vec<Vec<f64>>,
    },
    Discard {
        beta: f64,
        vcg: Vec<f64>,
        trust: Vec<f64>,
    },
}

/// A mechanism with all report-dependent deterministic work done.
#[derive(Clone, Debug)]
pub struct PreparedMechanism {
    profile: TypeProfile,
    allocation: usize,
    offsets: Vec<f64>,
    weights: Option<Vec<f64>>,
    rule: Rule,
}

impl PreparedMechanism {
    pub fn allocation(&self) -> usize {
        self.allocation
    }

    pub fn profile(&self) -> &TypeProfile {
        &self.profile
    }

    /// Pivot terms for one trial together with the draws that produced them.
    pub fn pivots(&self, streams: &TrialStreams) -> Result<(Vec<f64>, Draws)> {
        let mut draws = Draws::default();
        let pivots = match &self.rule {
            Rule::Fixed { pivots } => pivots.clone(),
            Rule::Doubling {
                anchors,
                lambda,
                k_max,
            } => {
                let mut ks = Vec::with_capacity(anchors.len());
                let pivots = anchors
                    .iter()
                    .enumerate()
                    .map(|(i, anchor)| {
                        let k = streams.agent(i).gen_range(0..=k_max[i]);
                        ks.push(k);
                        anchor - scaled_pow2(lambda[i], k as i64)
                    })
                    .collect();
                draws.k = Some(ks);
                draws.k_max = Some(k_max.clone());
                pivots
            }
            Rule::Generalized {
                partitions,
                params,
                baseline_welfare,
            } => {
                let n = partitions.len();
                let (mut ks, mut kmax, mut cells) = (
                    Vec::with_capacity(n),
                    Vec::with_capacity(n),
                    Vec::with_capacity(n),
                );
                let mut pivots = Vec::with_capacity(n);
                for (i, partition) in partitions.iter().enumerate() {
                    let mut rng = streams.agent(i);
                    let (cell, weakest) = partition.sample(&mut rng);
                    let delta_vcg = (weakest.welfare - baseline_welfare[i]).max(0.0);
                    let big_k = doubling_levels(delta_vcg, params.zeta[i], params.lambda[i])?;
                    let k = rng.gen_range(0..=big_k);
                    pivots.push(
                        weakest.welfare + params.zeta[i] - scaled_pow2(params.lambda[i], k as i64),
                    );
                    ks.push(k);
                    kmax.push(big_k);
                    cells.push(cell);
                }
                draws.k = Some(ks);
                draws.k_max = Some(kmax);
                draws.cell = Some(cells);
                pivots
            }
            Rule::Subspace {
                rays,
                levels,
                others,
            } => {
                let n = rays.len();
                let mut level_draws = Vec::with_capacity(n);
                let mut tuples = Vec::with_capacity(n);
                let mut pivots = Vec::with_capacity(n);
                for (i, agent_rays) in rays.iter().enumerate() {
                    let mut rng = streams.agent(i);
                    let level = rng.gen_range(1..=*levels);
                    let tuple = loop {
                        let t: Vec<u32> = (0..agent_rays.len())
                            .map(|_| rng.gen_range(level..=*levels))
                            .collect();
                        if t.iter().min() == Some(&level) {
                            break t;
                        }
                    };
                    let point = subspace_point(agent_rays, &tuple);
                    pivots.push(welfare_against(&others[i], &point).0);
                    level_draws.push(level);
                    tuples.push(tuple);
                }
                draws.level = Some(level_draws);
                draws.levels = Some(tuples);
                pivots
            }
            Rule::Discard { beta, vcg, trust } => {
                let coin: f64 = streams.global().gen();
                let discarded = coin < *beta;
                draws.discarded = Some(discarded);
                if discarded {
                    vcg.clone()
                } else {
                    trust.clone()
                }
            }
        };
        Ok((pivots, draws))
    }

    pub fn run(&self, streams: &TrialStreams) -> Result<MechanismOutcome> {
        let (pivots, draws) = self.pivots(streams)?;
        Ok(settle(
            &self.profile,
            self.allocation,
            &pivots,
            &self.offsets,
            self.weights.as_deref(),
            draws,
        ))
    }
}

fn run_deterministic(spec: MechanismSpec, profile: &TypeProfile) -> Result<MechanismOutcome> {
    spec.prepare(profile)?.run(&TrialStreams::new(0, 0))
}

/// Vanilla VCG: each agent pays its externality.
pub fn vcg(profile: &TypeProfile) -> MechanismOutcome {
    run_deterministic(MechanismSpec::Vcg, profile).expect("vcg cannot fail on a valid profile")
}

/// Efficient allocation with weakest-type prices.
pub fn weakest_type_vcg(
    profile: &TypeProfile,
    predictors: &[Predictor],
) -> Result<MechanismOutcome> {
    run_deterministic(
        MechanismSpec::WeakestTypeVcg {
            predictors: predictors.to_vec(),
        },
        profile,
    )
}

/// Weakest-type prices shifted by `zeta`.
pub fn mechanism_zeta_zero(
    profile: &TypeProfile,
    predictors: &[Predictor],
    zeta: &[f64],
) -> Result<MechanismOutcome> {
    run_deterministic(
        MechanismSpec::ZetaZero {
            predictors: predictors.to_vec(),
            zeta: zeta.to_vec(),
        },
        profile,
    )
}

/// Weakest-type prices shifted by `ζ_i` and lowered by a random `2^k λ_i`.
pub fn mechanism_zeta_lambda(
    profile: &TypeProfile,
    predictors: &[Predictor],
    params: &TuningParams,
    streams: &TrialStreams,
) -> Result<MechanismOutcome> {
    MechanismSpec::ZetaLambda {
        predictors: predictors.to_vec(),
        params: params.clone(),
    }
    .prepare(profile)?
    .run(streams)
}

/// [`mechanism_zeta_lambda`] with a weakest type sampled from a partition.
pub fn mechanism_generalized(
    profile: &TypeProfile,
    partitions: &[PartitionPredictor],
    params: &TuningParams,
    streams: &TrialStreams,
) -> Result<MechanismOutcome> {
    MechanismSpec::Generalized {
        partitions: partitions.to_vec(),
        params: params.clone(),
    }
    .prepare(profile)?
    .run(streams)
}

/// Prices from a random dyadic point on each agent's known subspace.
pub fn subspace_mechanism(
    profile: &TypeProfile,
    spec: &SubspaceSpec,
    streams: &TrialStreams,
) -> Result<MechanismOutcome> {
    MechanismSpec::Subspace { spec: spec.clone() }
        .prepare(profile)?
        .run(streams)
}

/// Groves mechanism with prior-optimal pivots.
pub fn groves_mechanism(profile: &TypeProfile, priors: &[PriorModel]) -> Result<MechanismOutcome> {
    run_deterministic(
        MechanismSpec::Groves {
            priors: priors.to_vec(),
        },
        profile,
    )
}

/// Affine maximizer with weakest-type prices.
pub fn weakest_type_am(
    profile: &TypeProfile,
    predictors: &[Predictor],
    am: &AmParams,
) -> Result<MechanismOutcome> {
    run_deterministic(
        MechanismSpec::AffineMaximizer {
            predictors: predictors.to_vec(),
            am: am.clone(),
        },
        profile,
    )
}
