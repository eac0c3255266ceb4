//! Predictor sets, weakest types, and prediction error measures.
//!
//! A predictor maps the other agents' reports to a polytope that supposedly
//! contains agent `i`'s type. The weakest type is the point of that polytope
//! minimizing `w(θ̃, θ_{-i})`; it is found either with one dense LP or by
//! constraint generation against a welfare oracle.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{argmax_lowest, welfare, welfare_against, TypeProfile, TypeVector, CMP_EPS};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation, LP_TOL};

/// Scaled constraint violation accepted as "inside the polytope".
pub const FEAS_TOL: f64 = 1e-7;

/// `Σ coeffs[α]·θ[α]  rel  bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: BTreeMap<usize, f64>,
    pub rel: Relation,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: BTreeMap<usize, f64>, rel: Relation, bound: f64) -> Result<Self> {
        let c = Self { coeffs, rel, bound };
        c.validate()?;
        Ok(c)
    }

    /// Single-coordinate constraint `θ[allocation] rel bound`.
    pub fn single(allocation: usize, rel: Relation, bound: f64) -> Self {
        Self {
            coeffs: BTreeMap::from([(allocation, 1.0)]),
            rel,
            bound,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.coeffs.values().all(|c| *c == 0.0) {
            return Err(Error::InvalidParameter(
                "constraint needs at least one nonzero coefficient".into(),
            ));
        }
        if !self.bound.is_finite() || self.coeffs.values().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "constraint entries must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn lhs(&self, point: &[f64]) -> f64 {
        self.coeffs.iter().map(|(&a, c)| c * point[a]).sum()
    }

    /// Violation divided by `max(1, ‖coeffs‖₂)`; zero when satisfied.
    pub fn scaled_violation(&self, point: &[f64]) -> f64 {
        let lhs = self.lhs(point);
        let raw = match self.rel {
            Relation::Le => lhs - self.bound,
            Relation::Ge => self.bound - lhs,
            Relation::Eq => (lhs - self.bound).abs(),
        };
        let norm = self.coeffs.values().map(|c| c * c).sum::<f64>().sqrt();
        raw.max(0.0) / norm.max(1.0)
    }
}

/// Intersection of linear constraints with the non-negative orthant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub constraints: Vec<LinearConstraint>,
}

impl Polytope {
    pub fn new(constraints: Vec<LinearConstraint>) -> Self {
        Self { constraints }
    }

    /// The single point `0`.
    pub fn zero(dim: usize) -> Self {
        Self::new(
            (0..dim)
                .map(|a| LinearConstraint::single(a, Relation::Eq, 0.0))
                .collect(),
        )
    }

    /// The single point `point`.
    pub fn point(point: &[f64]) -> Self {
        Self::new(
            point
                .iter()
                .enumerate()
                .map(|(a, &v)| LinearConstraint::single(a, Relation::Eq, v))
                .collect(),
        )
    }

    pub fn with(mut self, constraint: LinearConstraint) -> Self {
        self.constraints.push(constraint);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for c in &self.constraints {
            c.validate()?;
            if let Some(&a) = c.coeffs.keys().find(|&&a| a >= dim) {
                return Err(Error::AllocationOutOfRange {
                    allocation: a,
                    size: dim,
                });
            }
        }
        Ok(())
    }

    /// Allocations with a nonzero coefficient in some constraint.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .constraints
            .iter()
            .flat_map(|c| c.coeffs.iter().filter(|(_, v)| **v != 0.0).map(|(a, _)| *a))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn max_violation(&self, point: &[f64]) -> f64 {
        let negative = point.iter().fold(0.0f64, |m, v| m.max(-v));
        self.constraints
            .iter()
            .map(|c| c.scaled_violation(point))
            .fold(negative, f64::max)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.max_violation(point) <= FEAS_TOL
    }

    pub fn is_feasible(&self, dim: usize) -> Result<bool> {
        self.validate(dim)?;
        match self
            .lp_rows(dim, &(0..dim).collect::<Vec<_>>(), 0)
            .feasible_point()
        {
            Ok(_) => Ok(true),
            Err(Error::Infeasible) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Program over `vars` (allocation of each variable) plus `extra` trailing
    /// variables, holding only the polytope rows.
    fn lp_rows(&self, dim: usize, vars: &[usize], extra: usize) -> LinearProgram {
        let mut position = vec![usize::MAX; dim];
        for (k, &a) in vars.iter().enumerate() {
            position[a] = k;
        }
        let mut lp = LinearProgram::new(vars.len() + extra);
        for c in &self.constraints {
            let mut row = vec![0.0; vars.len() + extra];
            for (&a, &v) in &c.coeffs {
                row[position[a]] += v;
            }
            lp.push(row, c.rel, c.bound);
        }
        lp
    }
}

/// One term of a predictor's constraint bound, evaluated on the other agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundTerm {
    /// `scale · θ_agent[allocation]`
    Value {
        agent: usize,
        allocation: usize,
        scale: f64,
    },
    /// `scale · Σ_{j≠i} θ_j[allocation]`
    OthersSum { allocation: usize, scale: f64 },
    /// `scale · max_{j≠i} θ_j[allocation]`
    MaxOther { allocation: usize, scale: f64 },
}

/// `constant + Σ terms`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "BoundExprDoc", into = "BoundExprDoc")]
pub struct BoundExpr {
    pub constant: f64,
    pub terms: Vec<BoundTerm>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum BoundExprDoc {
    Constant(f64),
    Expr {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        terms: Vec<BoundTerm>,
    },
}

impl From<BoundExprDoc> for BoundExpr {
    fn from(doc: BoundExprDoc) -> Self {
        match doc {
            BoundExprDoc::Constant(constant) => Self {
                constant,
                terms: Vec::new(),
            },
            BoundExprDoc::Expr { constant, terms } => Self { constant, terms },
        }
    }
}

impl From<BoundExpr> for BoundExprDoc {
    fn from(e: BoundExpr) -> Self {
        if e.terms.is_empty() {
            BoundExprDoc::Constant(e.constant)
        } else {
            BoundExprDoc::Expr {
                constant: e.constant,
                terms: e.terms,
            }
        }
    }
}

impl From<f64> for BoundExpr {
    fn from(constant: f64) -> Self {
        Self {
            constant,
            terms: Vec::new(),
        }
    }
}

/// Read access to every agent except the one being predicted.
pub struct OthersView<'a> {
    profile: &'a TypeProfile,
    agent: usize,
}

impl<'a> OthersView<'a> {
    pub fn new(profile: &'a TypeProfile, agent: usize) -> Result<Self> {
        profile.check_agent(agent)?;
        Ok(Self { profile, agent })
    }

    pub fn value(&self, other: usize, allocation: usize) -> Result<f64> {
        if other == self.agent {
            return Err(Error::InvalidParameter(format!(
                "predictor for agent {other} cannot read that agent's own report"
            )));
        }
        let t = self.profile.agent(other)?;
        self.check_allocation(allocation)?;
        Ok(t[allocation])
    }

    fn check_allocation(&self, allocation: usize) -> Result<()> {
        let size = self.profile.num_allocations();
        if allocation >= size {
            return Err(Error::AllocationOutOfRange { allocation, size });
        }
        Ok(())
    }

    fn others(&self) -> impl Iterator<Item = &TypeVector> {
        let agent = self.agent;
        self.profile
            .agents()
            .iter()
            .enumerate()
            .filter(move |(j, _)| *j != agent)
            .map(|(_, t)| t)
    }

    pub fn others_sum(&self, allocation: usize) -> Result<f64> {
        self.check_allocation(allocation)?;
        Ok(self.others().map(|t| t[allocation]).sum())
    }

    /// Largest other value at `allocation`, or 0 with no other agents.
    pub fn max_other(&self, allocation: usize) -> Result<f64> {
        self.check_allocation(allocation)?;
        Ok(self.others().map(|t| t[allocation]).fold(0.0, f64::max))
    }
}

impl BoundExpr {
    pub fn eval(&self, view: &OthersView<'_>) -> Result<f64> {
        let mut total = self.constant;
        for term in &self.terms {
            total += match *term {
                BoundTerm::Value {
                    agent,
                    allocation,
                    scale,
                } => scale * view.value(agent, allocation)?,
                BoundTerm::OthersSum { allocation, scale } => {
                    scale * view.others_sum(allocation)?
                }
                BoundTerm::MaxOther { allocation, scale } => scale * view.max_other(allocation)?,
            };
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintTemplate {
    pub coeffs: BTreeMap<usize, f64>,
    pub rel: Relation,
    pub bound: BoundExpr,
}

/// Constraint templates whose bounds may depend on the other agents' reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub constraints: Vec<ConstraintTemplate>,
}

impl Predictor {
    /// Predictor that ignores the reports and always returns `polytope`.
    pub fn fixed(polytope: &Polytope) -> Self {
        Self {
            constraints: polytope
                .constraints
                .iter()
                .map(|c| ConstraintTemplate {
                    coeffs: c.coeffs.clone(),
                    rel: c.rel,
                    bound: c.bound.into(),
                })
                .collect(),
        }
    }

    /// The whole non-negative orthant (no information).
    pub fn uninformative() -> Self {
        Self::default()
    }

    pub fn build(&self, profile: &TypeProfile, agent: usize) -> Result<Polytope> {
        let view = OthersView::new(profile, agent)?;
        let constraints = self
            .constraints
            .iter()
            .map(|t| LinearConstraint::new(t.coeffs.clone(), t.rel, t.bound.eval(&view)?))
            .collect::<Result<Vec<_>>>()?;
        let polytope = Polytope::new(constraints);
        polytope.validate(profile.num_allocations())?;
        Ok(polytope)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakestTypeResult {
    pub weakest: TypeVector,
    pub welfare: f64,
    pub certificate: usize,
}

/// The objective `max_α scale·θ̃[α] + baseline[α]` minimized over a polytope.
///
/// With `scale = 1` and `baseline = Σ_{j≠i} θ_j` this is `w(θ̃, θ_{-i})`;
/// weighted affine maximizers use other weights and boosts.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxTarget {
    pub baseline: Vec<f64>,
    pub scale: f64,
}

impl MinMaxTarget {
    pub fn welfare(profile: &TypeProfile, agent: usize) -> Result<Self> {
        Ok(Self {
            baseline: profile.others_sum(agent)?,
            scale: 1.0,
        })
    }

    /// `max_α scale·point[α] + baseline[α]` and its lowest-index argmax.
    pub fn evaluate(&self, point: &[f64]) -> (f64, usize) {
        if self.scale == 1.0 {
            welfare_against(&self.baseline, point)
        } else {
            let scaled: Vec<f64> = point.iter().map(|v| self.scale * v).collect();
            welfare_against(&self.baseline, &scaled)
        }
    }
}

fn finish(target: &MinMaxTarget, values: Vec<f64>) -> WeakestTypeResult {
    let weakest = TypeVector::from_solver(values);
    let (welfare, certificate) = target.evaluate(weakest.as_slice());
    WeakestTypeResult {
        weakest,
        welfare,
        certificate,
    }
}

/// Weakest type by one LP: `min γ` s.t. `θ̃[α] + Σ_{j≠i}θ_j[α] ≤ γ` for
/// every allocation, `θ̃` in the polytope, `θ̃ ≥ 0`.
pub fn weakest_type_lp(
    polytope: &Polytope,
    profile: &TypeProfile,
    agent: usize,
) -> Result<WeakestTypeResult> {
    minimize_max_lp(polytope, &MinMaxTarget::welfare(profile, agent)?)
}

/// [`weakest_type_lp`] for an arbitrary min-max target.
pub fn minimize_max_lp(polytope: &Polytope, target: &MinMaxTarget) -> Result<WeakestTypeResult> {
    let dim = target.baseline.len();
    check_target(target)?;
    polytope.validate(dim)?;
    let vars: Vec<usize> = (0..dim).collect();
    let mut lp = polytope.lp_rows(dim, &vars, 1);
    lp.objective[dim] = 1.0;
    for (a, &b) in target.baseline.iter().enumerate() {
        let mut row = vec![0.0; dim + 1];
        row[a] = target.scale;
        row[dim] = -1.0;
        lp.push(row, Relation::Le, -b);
    }
    let sol = lp.solve()?;
    Ok(finish(target, sol.x[..dim].to_vec()))
}

fn check_target(target: &MinMaxTarget) -> Result<()> {
    if target.baseline.is_empty() {
        return Err(Error::InvalidParameter("empty allocation space".into()));
    }
    if !(target.scale > 0.0 && target.scale.is_finite()) {
        return Err(Error::InvalidParameter(
            "objective scale must be positive".into(),
        ));
    }
    Ok(())
}

/// Computes `max_α scale·θ̃[α] + baseline[α]` for any replacement type.
pub trait WelfareOracle {
    fn query(&self, replacement: &[f64]) -> (f64, usize);
    fn dim(&self) -> usize;
    fn scale(&self) -> f64 {
        1.0
    }
}

/// Oracle backed by a dense scan, counting its calls.
#[derive(Debug)]
pub struct DenseOracle {
    target: MinMaxTarget,
    calls: AtomicUsize,
}

impl DenseOracle {
    pub fn new(target: MinMaxTarget) -> Self {
        Self {
            target,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn for_agent(profile: &TypeProfile, agent: usize) -> Result<Self> {
        Ok(Self::new(MinMaxTarget::welfare(profile, agent)?))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl WelfareOracle for DenseOracle {
    fn query(&self, replacement: &[f64]) -> (f64, usize) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.target.evaluate(replacement)
    }

    fn dim(&self) -> usize {
        self.target.baseline.len()
    }

    fn scale(&self) -> f64 {
        self.target.scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgReport {
    pub result: WeakestTypeResult,
    pub oracle_calls: usize,
    /// Allocation constraints added after the initial zero-type query.
    pub constraints_added: usize,
}

/// Weakest type by constraint generation.
///
/// Only coordinates mentioned by the polytope become LP variables; every
/// other coordinate of the weakest type is zero without loss. Allocation rows
/// are added one at a time, each being the oracle's argmax at the current
/// candidate, so at most `|Γ|` rows are ever added.
pub fn weakest_type_cg(
    polytope: &Polytope,
    profile: &TypeProfile,
    agent: usize,
    oracle: &dyn WelfareOracle,
) -> Result<WeakestTypeResult> {
    profile.check_agent(agent)?;
    if oracle.dim() != profile.num_allocations() {
        return Err(Error::InvalidParameter("oracle dimension mismatch".into()));
    }
    Ok(constraint_generation(polytope, oracle)?.result)
}

/// Constraint generation against any oracle, with call statistics.
pub fn constraint_generation(polytope: &Polytope, oracle: &dyn WelfareOracle) -> Result<CgReport> {
    let dim = oracle.dim();
    let scale = oracle.scale();
    polytope.validate(dim)?;
    let vars = polytope.support();
    let mut position = vec![None; dim];
    for (k, &a) in vars.iter().enumerate() {
        position[a] = Some(k);
    }
    let base = polytope.lp_rows(dim, &vars, 1);
    let gamma = vars.len();

    let mut calls = 0;
    let mut candidate = vec![0.0; dim];
    let (w0, first) = oracle.query(&candidate);
    calls += 1;
    // (allocation, baseline value at that allocation) for every generated row.
    let mut rows: Vec<(usize, f64)> = vec![(first, w0)];
    let mut added = 0;
    loop {
        let mut lp = base.clone();
        lp.objective[gamma] = 1.0;
        for &(a, b) in &rows {
            let mut row = vec![0.0; gamma + 1];
            if let Some(k) = position[a] {
                row[k] = scale;
            }
            row[gamma] = -1.0;
            lp.push(row, Relation::Le, -b);
        }
        let sol = lp.solve()?;
        candidate.iter_mut().for_each(|v| *v = 0.0);
        for (k, &a) in vars.iter().enumerate() {
            candidate[a] = if sol.x[k] < 0.0 { 0.0 } else { sol.x[k] };
        }
        let level = sol.x[gamma];
        let (value, arg) = oracle.query(&candidate);
        calls += 1;
        if value <= level + LP_TOL * (1.0 + level.abs()) || rows.iter().any(|r| r.0 == arg) {
            let weakest = TypeVector::from_solver(candidate);
            return Ok(CgReport {
                result: WeakestTypeResult {
                    weakest,
                    welfare: value,
                    certificate: arg,
                },
                oracle_calls: calls,
                constraints_added: added,
            });
        }
        rows.push((arg, value - scale * candidate[arg]));
        added += 1;
    }
}

/// Prediction error measures for one agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMeasures {
    /// `w(θ) − min-welfare`; negative when the prediction is too aggressive.
    pub delta_err: f64,
    /// `min-welfare − w(0, θ_{-i})`, never negative.
    pub delta_vcg: f64,
}

/// Everything the payment rules need to know about one agent's prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Assessment {
    pub weakest: WeakestTypeResult,
    pub optimal_welfare: f64,
    /// `w(0, θ_{-i})`
    pub baseline_welfare: f64,
    pub measures: ErrorMeasures,
}

impl Assessment {
    pub fn from_weakest(
        profile: &TypeProfile,
        agent: usize,
        weakest: WeakestTypeResult,
    ) -> Result<Self> {
        let others = profile.others_sum(agent)?;
        let baseline_welfare = argmax_lowest(&others).0;
        let optimal_welfare = welfare(profile).0;
        let measures = ErrorMeasures {
            delta_err: optimal_welfare - weakest.welfare,
            delta_vcg: (weakest.welfare - baseline_welfare).max(0.0),
        };
        Ok(Self {
            weakest,
            optimal_welfare,
            baseline_welfare,
            measures,
        })
    }
}

pub fn assess(polytope: &Polytope, profile: &TypeProfile, agent: usize) -> Result<Assessment> {
    let weakest = weakest_type_lp(polytope, profile, agent)?;
    Assessment::from_weakest(profile, agent, weakest)
}

pub fn error_measures(
    predictor: &Predictor,
    profile: &TypeProfile,
    agent: usize,
) -> Result<ErrorMeasures> {
    let polytope = predictor.build(profile, agent)?;
    Ok(assess(&polytope, profile, agent)?.measures)
}

/// `{θ̃ : θ̃[allocation] ≥ threshold}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub allocation: usize,
    pub threshold: f64,
}

impl Halfspace {
    pub fn contains(&self, point: &[f64]) -> bool {
        point[self.allocation] >= self.threshold - CMP_EPS
    }
}

/// The super-level set `{θ̃ : w(θ̃, θ_{-i}) ≥ level}` as a union of
/// axis-parallel halfspaces, one per allocation.
pub fn level_set_halfspaces(
    level: f64,
    profile: &TypeProfile,
    agent: usize,
) -> Result<Vec<Halfspace>> {
    Ok(profile
        .others_sum(agent)?
        .into_iter()
        .enumerate()
        .map(|(allocation, o)| Halfspace {
            allocation,
            threshold: level - o,
        })
        .collect())
}

pub fn in_union(halfspaces: &[Halfspace], point: &[f64]) -> bool {
    halfspaces.iter().any(|h| h.contains(point))
}

/// Within-cell sampler for a partition predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellDensity {
    PointMass {
        point: Vec<f64>,
    },
    /// Independent uniform coordinates on `[low[α], high[α]]`.
    UniformBox {
        low: Vec<f64>,
        high: Vec<f64>,
    },
}

impl CellDensity {
    fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            CellDensity::PointMass { point } => {
                point.len() == dim && point.iter().all(|v| v.is_finite() && *v >= 0.0)
            }
            CellDensity::UniformBox { low, high } => {
                low.len() == dim
                    && high.len() == dim
                    && low
                        .iter()
                        .zip(high)
                        .all(|(l, h)| l.is_finite() && h.is_finite() && *l >= 0.0 && l <= h)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("malformed cell density".into()))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            CellDensity::PointMass { point } => point.clone(),
            CellDensity::UniformBox { low, high } => low
                .iter()
                .zip(high)
                .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    pub predictor: Predictor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<CellDensity>,
}

/// A distribution over predicted cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPredictor {
    pub cells: Vec<PartitionCell>,
    pub probabilities: Vec<f64>,
}

impl PartitionPredictor {
    pub fn single(predictor: Predictor) -> Self {
        Self {
            cells: vec![PartitionCell {
                predictor,
                density: None,
            }],
            probabilities: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.cells.len() != self.probabilities.len() {
            return Err(Error::InvalidParameter(
                "partition needs one probability per cell and at least one cell".into(),
            ));
        }
        if self
            .probabilities
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return Err(Error::InvalidParameter(
                "cell probabilities must be >= 0".into(),
            ));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > CMP_EPS {
            return Err(Error::InvalidParameter(format!(
                "cell probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Solves each density-free cell once so that sampling is cheap.
    pub fn prepare(&self, profile: &TypeProfile, agent: usize) -> Result<PreparedPartition> {
        self.validate()?;
        let target = MinMaxTarget::welfare(profile, agent)?;
        let cells = self
            .cells
            .iter()
            .map(|cell| {
                let polytope = cell.predictor.build(profile, agent)?;
                match &cell.density {
                    None => Ok(PreparedCell::Fixed(minimize_max_lp(&polytope, &target)?)),
                    Some(d) => {
                        d.validate(profile.num_allocations())?;
                        Ok(PreparedCell::Sampled(d.clone()))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let index = WeightedIndex::new(&self.probabilities)
            .map_err(|e| Error::InvalidParameter(format!("cell probabilities: {e}")))?;
        Ok(PreparedPartition {
            cells,
            index,
            target,
        })
    }
}

#[derive(Clone, Debug)]
enum PreparedCell {
    Fixed(WeakestTypeResult),
    Sampled(CellDensity),
}

#[derive(Clone, Debug)]
pub struct PreparedPartition {
    cells: Vec<PreparedCell>,
    index: WeightedIndex<f64>,
    target: MinMaxTarget,
}

impl PreparedPartition {
    /// Draws a cell and the weakest type it reports.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, WeakestTypeResult) {
        let cell = self.index.sample(rng);
        let result = match &self.cells[cell] {
            PreparedCell::Fixed(r) => r.clone(),
            PreparedCell::Sampled(d) => finish(&self.target, d.sample(rng)),
        };
        (cell, result)
    }

    /// Weakest welfare of a density-free cell.
    pub fn cell_welfare(&self, cell: usize) -> Option<f64> {
        match self.cells.get(cell)? {
            PreparedCell::Fixed(r) => Some(r.welfare),
            PreparedCell::Sampled(_) => None,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }
}

/// Samples a cell and returns its weakest type (or a density draw).
pub fn sample_weakest<R: Rng + ?Sized>(
    partition: &PartitionPredictor,
    profile: &TypeProfile,
    agent: usize,
    rng: &mut R,
) -> Result<(usize, WeakestTypeResult)> {
    Ok(partition.prepare(profile, agent)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CombinatorialAuction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_error_instance() -> TypeProfile {
        TypeProfile::from_rows(vec![vec![4.0, 0.0], vec![1.0, 3.0]]).unwrap()
    }

    fn polygon() -> Polytope {
        Polytope::new(vec![
            LinearConstraint::single(0, Relation::Ge, 3.0),
            LinearConstraint::single(0, Relation::Le, 5.0),
            LinearConstraint::single(1, Relation::Le, 1.0),
        ])
    }

    #[test]
    fn unit_error_polygon() {
        let profile = unit_error_instance();
        let a = assess(&polygon(), &profile, 0).unwrap();
        assert!((a.weakest.welfare - 4.0).abs() < 1e-9);
        assert!((a.measures.delta_err - 1.0).abs() < 1e-9);
        assert!((a.measures.delta_vcg - 1.0).abs() < 1e-9);
        assert!(polygon().contains(a.weakest.weakest.as_slice()));
    }

    #[test]
    fn unit_error_polytope_without_true_type_has_same_error() {
        let profile = unit_error_instance();
        let p = Polytope::new(vec![
            LinearConstraint::single(1, Relation::Ge, 1.0),
            LinearConstraint::single(0, Relation::Le, 1.0),
        ]);
        assert!(!p.contains(profile.agent(0).unwrap().as_slice()));
        let a = assess(&p, &profile, 0).unwrap();
        assert!((a.measures.delta_err - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_polytope() {
        let profile = unit_error_instance();
        let r = weakest_type_lp(&Polytope::zero(2), &profile, 0).unwrap();
        assert_eq!(r.weakest.as_slice(), &[0.0, 0.0]);
        assert_eq!(r.welfare, 3.0);
        let oracle = DenseOracle::for_agent(&profile, 0).unwrap();
        let cg = constraint_generation(&Polytope::zero(2), &oracle).unwrap();
        assert_eq!(cg.result.welfare, 3.0);
        assert_eq!(cg.constraints_added, 0);
    }

    #[test]
    fn infeasible_polytope_is_reported() {
        let profile = unit_error_instance();
        let p = Polytope::new(vec![
            LinearConstraint::single(0, Relation::Ge, 3.0),
            LinearConstraint::single(0, Relation::Le, 2.0),
        ]);
        assert_eq!(weakest_type_lp(&p, &profile, 0), Err(Error::Infeasible));
        let oracle = DenseOracle::for_agent(&profile, 0).unwrap();
        assert_eq!(
            weakest_type_cg(&p, &profile, 0, &oracle),
            Err(Error::Infeasible)
        );
        assert!(!p.is_feasible(2).unwrap());
    }

    #[test]
    fn exact_prediction_has_no_error() {
        let profile = unit_error_instance();
        let predictor = Predictor::fixed(&Polytope::point(profile.agent(0).unwrap().as_slice()));
        let m = error_measures(&predictor, &profile, 0).unwrap();
        assert!(m.delta_err.abs() < 1e-9);
    }

    #[test]
    fn two_item_predictor_covers_every_allocation_giving_x() {
        let auction = CombinatorialAuction::new(2, 2, 4096).unwrap();
        let profile = auction
            .profile(&[vec![0.0, 10.0, 10.0, 10.0], vec![0.0, 5.0, 4.0, 5.0]])
            .unwrap();
        let mut p = Polytope::default();
        for a in auction.allocations_with_bundle(0, 0b01) {
            p = p.with(LinearConstraint::single(a, Relation::Ge, 7.0));
        }
        let r = weakest_type_lp(&p, &profile, 0).unwrap();
        assert!((r.welfare - 11.0).abs() < 1e-9);
    }

    #[test]
    fn halfspaces_for_unit_error_instance() {
        let profile = unit_error_instance();
        let h = level_set_halfspaces(4.0, &profile, 0).unwrap();
        assert_eq!(h[0].threshold, 3.0);
        assert_eq!(h[1].threshold, 1.0);
        let all = level_set_halfspaces(3.0, &profile, 0).unwrap();
        assert!(in_union(&all, &[0.0, 0.0]));
    }

    #[test]
    fn predictor_reads_other_agents_only() {
        let profile = unit_error_instance();
        let predictor = Predictor {
            constraints: vec![ConstraintTemplate {
                coeffs: BTreeMap::from([(0, 1.0)]),
                rel: Relation::Ge,
                bound: BoundExpr {
                    constant: 1.0,
                    terms: vec![BoundTerm::Value {
                        agent: 1,
                        allocation: 1,
                        scale: 0.5,
                    }],
                },
            }],
        };
        let p = predictor.build(&profile, 0).unwrap();
        assert_eq!(p.constraints[0].bound, 2.5);
        assert!(predictor.build(&profile, 1).is_err());
    }

    #[test]
    fn bound_expr_accepts_plain_numbers() {
        let t: ConstraintTemplate =
            serde_json::from_str(r#"{"coeffs":{"0":1.0},"rel":">=","bound":3}"#).unwrap();
        assert_eq!(t.bound, BoundExpr::from(3.0));
        let p: Polytope =
            serde_json::from_str(r#"{"constraints":[{"coeffs":{"1":2.0},"rel":"<=","bound":4}]}"#)
                .unwrap();
        assert_eq!(p.constraints[0].coeffs[&1], 2.0);
    }

    #[test]
    fn single_cell_partition_matches_lp() {
        let profile = unit_error_instance();
        let part = PartitionPredictor::single(Predictor::fixed(&polygon()));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (cell, r) = sample_weakest(&part, &profile, 0, &mut rng).unwrap();
        assert_eq!(cell, 0);
        assert_eq!(r, weakest_type_lp(&polygon(), &profile, 0).unwrap());
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let mut part = PartitionPredictor::single(Predictor::uninformative());
        part.probabilities = vec![0.9];
        assert!(part.validate().is_err());
    }
}
