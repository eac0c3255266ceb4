//! Finite mechanism environments.
//!
//! An environment is a finite allocation space together with one valuation
//! vector per agent. Every welfare quantity in the crate reduces to scans over
//! these dense vectors, so allocation spaces are always materialized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for tie detection and participation tests.
pub const CMP_EPS: f64 = 1e-9;

/// Ordered, index-stable list of allocations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AllocationSpace {
    labels: Vec<String>,
}

impl AllocationSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidProfile("allocation space is empty".into()));
        }
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidProfile(
                "allocation labels must be distinct".into(),
            ));
        }
        Ok(Self { labels })
    }

    /// Space with labels `a0, a1, ...`.
    pub fn indexed(size: usize) -> Result<Self> {
        Self::new((0..size).map(|k| format!("a{k}")).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, allocation: usize) -> Option<&str> {
        self.labels.get(allocation).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl TryFrom<Vec<String>> for AllocationSpace {
    type Error = Error;
    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<AllocationSpace> for Vec<String> {
    fn from(space: AllocationSpace) -> Self {
        space.labels
    }
}

/// An agent's value for every allocation. Values are finite and non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TypeVector(Vec<f64>);

impl TypeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidProfile(format!(
                "type value {v} at allocation {k} must be finite and non-negative"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Builds a type from solver output, snapping tiny negative round-off to zero.
    pub(crate) fn from_solver(values: Vec<f64>) -> Self {
        Self(
            values
                .into_iter()
                .map(|v| if v < 0.0 { 0.0 } else { v })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }

    /// `self[α] >= other[α]` for every allocation.
    pub fn dominates(&self, other: &TypeVector, tol: f64) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| *a + tol >= *b)
    }
}

impl std::ops::Index<usize> for TypeVector {
    type Output = f64;
    fn index(&self, allocation: usize) -> &f64 {
        &self.0[allocation]
    }
}

impl TryFrom<Vec<f64>> for TypeVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<TypeVector> for Vec<f64> {
    fn from(t: TypeVector) -> Self {
        t.0
    }
}

/// One type vector per agent over a shared allocation space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDoc", into = "ProfileDoc")]
pub struct TypeProfile {
    space: AllocationSpace,
    agents: Vec<TypeVector>,
}

/// Wire form of a profile: `{allocations:[labels], agents:[[values]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileDoc {
    pub allocations: Vec<String>,
    pub agents: Vec<Vec<f64>>,
}

impl TryFrom<ProfileDoc> for TypeProfile {
    type Error = Error;
    fn try_from(doc: ProfileDoc) -> Result<Self> {
        let space = AllocationSpace::new(doc.allocations)?;
        let agents = doc
            .agents
            .into_iter()
            .map(TypeVector::new)
            .collect::<Result<Vec<_>>>()?;
        TypeProfile::new(space, agents)
    }
}

impl From<TypeProfile> for ProfileDoc {
    fn from(p: TypeProfile) -> Self {
        ProfileDoc {
            allocations: p.space.labels,
            agents: p.agents.into_iter().map(TypeVector::into_inner).collect(),
        }
    }
}

impl TypeProfile {
    pub fn new(space: AllocationSpace, agents: Vec<TypeVector>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidProfile(
                "profile needs at least one agent".into(),
            ));
        }
        if let Some(i) = agents.iter().position(|t| t.len() != space.len()) {
            return Err(Error::InvalidProfile(format!(
                "agent {i} has {} values but the allocation space has {}",
                agents[i].len(),
                space.len()
            )));
        }
        Ok(Self { space, agents })
    }

    /// Profile over an indexed space from raw value rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.first().map_or(0, Vec::len);
        let space = AllocationSpace::indexed(size)?;
        let agents = rows
            .into_iter()
            .map(TypeVector::new)
            .collect::<Result<_>>()?;
        Self::new(space, agents)
    }

    pub fn space(&self) -> &AllocationSpace {
        &self.space
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_allocations(&self) -> usize {
        self.space.len()
    }

    pub fn agents(&self) -> &[TypeVector] {
        &self.agents
    }

    pub fn agent(&self, agent: usize) -> Result<&TypeVector> {
        self.agents.get(agent).ok_or(Error::AgentOutOfRange {
            agent,
            agents: self.agents.len(),
        })
    }

    pub fn check_agent(&self, agent: usize) -> Result<()> {
        self.agent(agent).map(|_| ())
    }

    /// Same profile with agent `agent` reporting `replacement`.
    pub fn with_replacement(&self, agent: usize, replacement: TypeVector) -> Result<Self> {
        self.check_agent(agent)?;
        if replacement.len() != self.space.len() {
            return Err(Error::InvalidProfile(
                "replacement has wrong dimension".into(),
            ));
        }
        let mut agents = self.agents.clone();
        agents[agent] = replacement;
        Ok(Self {
            space: self.space.clone(),
            agents,
        })
    }

    /// `Σ_i θ_i[α]` for every allocation, summed in agent order.
    pub fn totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.space.len()];
        for t in &self.agents {
            for (acc, v) in totals.iter_mut().zip(t.as_slice()) {
                *acc += v;
            }
        }
        totals
    }

    /// `Σ_{j≠i} θ_j[α]` for every allocation.
    pub fn others_sum(&self, agent: usize) -> Result<Vec<f64>> {
        self.check_agent(agent)?;
        let mut totals = vec![0.0; self.space.len()];
        for (j, t) in self.agents.iter().enumerate() {
            if j == agent {
                continue;
            }
            for (acc, v) in totals.iter_mut().zip(t.as_slice()) {
                *acc += v;
            }
        }
        Ok(totals)
    }
}

/// Maximum score and its lowest-index argmax (ties within [`CMP_EPS`]).
pub fn argmax_lowest(scores: &[f64]) -> (f64, usize) {
    let mut best = (scores[0], 0);
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > best.0 + CMP_EPS {
            best = (s, k);
        }
    }
    best
}

/// Efficient welfare `w(θ)` and the efficient allocation.
pub fn welfare(profile: &TypeProfile) -> (f64, usize) {
    argmax_lowest(&profile.totals())
}

/// `max_α baseline[α] + replacement[α]`, with its lowest-index argmax.
pub fn welfare_against(baseline: &[f64], replacement: &[f64]) -> (f64, usize) {
    let scores: Vec<f64> = baseline
        .iter()
        .zip(replacement)
        .map(|(b, r)| b + r)
        .collect();
    argmax_lowest(&scores)
}

/// `w(replacement, θ_{-agent})`.
pub fn welfare_with_replacement(
    profile: &TypeProfile,
    agent: usize,
    replacement: &TypeVector,
) -> Result<f64> {
    let others = profile.others_sum(agent)?;
    if replacement.len() != others.len() {
        return Err(Error::InvalidProfile(
            "replacement has wrong dimension".into(),
        ));
    }
    Ok(welfare_against(&others, replacement.as_slice()).0)
}

/// Per-agent random draws made by a mechanism run, recorded for auditing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Draws {
    /// Doubling exponent `k_i` per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<u32>>,
    /// Largest admissible exponent `K_i` per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<Vec<u32>>,
    /// Subspace level `ℓ_i` per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Vec<u32>>,
    /// Subspace level tuple per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<Vec<u32>>>,
    /// Partition cell sampled per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<Vec<usize>>,
    /// Whether predictions were discarded for this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discarded: Option<bool>,
}

/// Result of running a mechanism on one reported profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub allocation: usize,
    pub payments: Vec<f64>,
    pub participants: Vec<usize>,
    pub welfare: f64,
    pub revenue: f64,
    #[serde(default)]
    pub draws: Draws,
}

impl MechanismOutcome {
    /// Builds an outcome, zeroing the payments of excluded agents and
    /// deriving welfare and revenue from the participants.
    pub fn settle(
        profile: &TypeProfile,
        allocation: usize,
        mut payments: Vec<f64>,
        participating: &[bool],
        draws: Draws,
    ) -> Self {
        let mut participants = Vec::new();
        for (i, &inside) in participating.iter().enumerate() {
            if inside {
                participants.push(i);
            } else {
                payments[i] = 0.0;
            }
        }
        let (welfare, revenue) = Self::totals_for(profile, allocation, &payments, &participants);
        Self {
            allocation,
            payments,
            participants,
            welfare,
            revenue,
            draws,
        }
    }

    fn totals_for(
        profile: &TypeProfile,
        allocation: usize,
        payments: &[f64],
        participants: &[usize],
    ) -> (f64, f64) {
        let mut welfare = 0.0;
        let mut revenue = 0.0;
        for &i in participants {
            welfare += profile.agents()[i][allocation];
            revenue += payments[i];
        }
        (welfare, revenue)
    }

    pub fn participates(&self, agent: usize) -> bool {
        self.participants.binary_search(&agent).is_ok()
    }

    /// Realized utility of `agent` whose true type is `true_type`.
    pub fn utility(&self, agent: usize, true_type: &TypeVector) -> f64 {
        if self.participates(agent) {
            true_type[self.allocation] - self.payments[agent]
        } else {
            0.0
        }
    }

    /// Checks that stored welfare/revenue match the other fields exactly.
    pub fn is_consistent(&self, profile: &TypeProfile) -> bool {
        let excluded_pay_zero = (0..self.payments.len())
            .filter(|i| !self.participates(*i))
            .all(|i| self.payments[i] == 0.0);
        let (w, r) = Self::totals_for(profile, self.allocation, &self.payments, &self.participants);
        excluded_pay_zero
            && w == self.welfare
            && r == self.revenue
            && self.participants.iter().all(|&i| i < profile.num_agents())
    }
}

/// Example-setting generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    /// `items` indivisible items sold to `bidders` bidders (or kept).
    CombinatorialAuction { bidders: usize, items: usize },
    /// Matchings (including partial ones) of `items` items to `buyers` buyers.
    Matching { items: usize, buyers: usize },
    /// `agents` agents with values for each of `outcomes` public outcomes.
    SharedOutcome { agents: usize, outcomes: usize },
    /// One item, `bidders` bidders; allocation 0 is "unsold".
    SingleItem { bidders: usize },
}

/// Value distribution and size cap for generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Values are drawn uniformly from `[value_low, value_high]`.
    pub value_low: f64,
    pub value_high: f64,
    /// Largest allocation space a generator may materialize.
    pub cap: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            value_low: 0.0,
            value_high: 100.0,
            cap: 4096,
        }
    }
}

/// Builds a seeded random environment of the requested kind.
pub fn make_environment(
    kind: &EnvKind,
    rng_seed: u64,
    config: &GeneratorConfig,
) -> Result<(AllocationSpace, TypeProfile)> {
    if !(config.value_low >= 0.0 && config.value_high >= config.value_low) {
        return Err(Error::InvalidParameter(
            "value range must satisfy 0 <= low <= high".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut draw = move || {
        if config.value_high > config.value_low {
            rng.gen_range(config.value_low..=config.value_high)
        } else {
            config.value_low
        }
    };
    let profile = match *kind {
        EnvKind::CombinatorialAuction { bidders, items } => {
            let auction = CombinatorialAuction::new(bidders, items, config.cap)?;
            let valuations: Vec<Vec<f64>> = (0..bidders)
                .map(|_| {
                    (0..auction.num_bundles())
                        .map(|mask| if mask == 0 { 0.0 } else { draw() })
                        .collect()
                })
                .collect();
            auction.profile(&valuations)?
        }
        EnvKind::Matching { items, buyers } => {
            let market = MatchingMarket::new(items, buyers, config.cap)?;
            let values: Vec<Vec<f64>> = (0..buyers)
                .map(|_| (0..items).map(|_| draw()).collect())
                .collect();
            market.profile(&values)?
        }
        EnvKind::SharedOutcome { agents, outcomes } => {
            positive("agents", agents)?;
            positive("outcomes", outcomes)?;
            check_cap(outcomes as u128, config.cap)?;
            let space =
                AllocationSpace::new((0..outcomes).map(|k| format!("outcome{k}")).collect())?;
            let types = (0..agents)
                .map(|_| TypeVector::new((0..outcomes).map(|_| draw()).collect()))
                .collect::<Result<_>>()?;
            TypeProfile::new(space, types)?
        }
        EnvKind::SingleItem { bidders } => {
            positive("bidders", bidders)?;
            check_cap(bidders as u128 + 1, config.cap)?;
            let values: Vec<f64> = (0..bidders).map(|_| draw()).collect();
            single_item_profile(&values)?
        }
    };
    Ok((profile.space().clone(), profile))
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::InvalidParameter(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

fn check_cap(size: u128, cap: usize) -> Result<()> {
    if size > cap as u128 {
        Err(Error::CapExceeded { size, cap })
    } else {
        Ok(())
    }
}

/// Single-item profile: allocation 0 leaves the item unsold, allocation
/// `i + 1` gives it to bidder `i`.
pub fn single_item_profile(values: &[f64]) -> Result<TypeProfile> {
    let n = values.len();
    let mut labels = vec!["unsold".to_string()];
    labels.extend((0..n).map(|i| format!("bidder{i}")));
    let space = AllocationSpace::new(labels)?;
    let agents = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut t = vec![0.0; n + 1];
            t[i + 1] = v;
            TypeVector::new(t)
        })
        .collect::<Result<_>>()?;
    TypeProfile::new(space, agents)
}

/// Allocation space of a combinatorial auction. Allocation `a` assigns item
/// `x` to owner `digit_x(a)` in base `bidders + 1`, where owner 0 is the
/// seller and owner `b + 1` is bidder `b`.
#[derive(Clone, Debug)]
pub struct CombinatorialAuction {
    bidders: usize,
    items: usize,
    size: usize,
}

impl CombinatorialAuction {
    pub fn new(bidders: usize, items: usize, cap: usize) -> Result<Self> {
        positive("bidders", bidders)?;
        positive("items", items)?;
        let size = (bidders as u128 + 1)
            .checked_pow(items as u32)
            .unwrap_or(u128::MAX);
        check_cap(size, cap)?;
        Ok(Self {
            bidders,
            items,
            size: size as usize,
        })
    }

    pub fn num_allocations(&self) -> usize {
        self.size
    }

    pub fn num_bundles(&self) -> usize {
        1 << self.items
    }

    /// Owner of `item` under `allocation` (0 = unsold, b + 1 = bidder b).
    pub fn owner(&self, allocation: usize, item: usize) -> usize {
        (allocation / (self.bidders + 1).pow(item as u32)) % (self.bidders + 1)
    }

    /// Bitmask of the items bidder `bidder` receives under `allocation`.
    pub fn bundle(&self, allocation: usize, bidder: usize) -> usize {
        (0..self.items)
            .filter(|&x| self.owner(allocation, x) == bidder + 1)
            .fold(0, |m, x| m | (1 << x))
    }

    /// Allocations under which `bidder` receives exactly the bundle `mask`.
    pub fn allocations_with_bundle(&self, bidder: usize, mask: usize) -> Vec<usize> {
        (0..self.size)
            .filter(|&a| self.bundle(a, bidder) == mask)
            .collect()
    }

    pub fn space(&self) -> AllocationSpace {
        let labels = (0..self.size)
            .map(|a| {
                (0..self.items)
                    .map(|x| match self.owner(a, x) {
                        0 => format!("item{x}=none"),
                        o => format!("item{x}=b{}", o - 1),
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        AllocationSpace::new(labels).expect("auction labels are distinct")
    }

    /// Profile from `valuations[bidder][bundle mask]`.
    pub fn profile(&self, valuations: &[Vec<f64>]) -> Result<TypeProfile> {
        if valuations.len() != self.bidders
            || valuations.iter().any(|v| v.len() != self.num_bundles())
        {
            return Err(Error::InvalidProfile(
                "need one value per bundle for every bidder".into(),
            ));
        }
        let agents = (0..self.bidders)
            .map(|b| {
                TypeVector::new(
                    (0..self.size)
                        .map(|a| valuations[b][self.bundle(a, b)])
                        .collect(),
                )
            })
            .collect::<Result<_>>()?;
        TypeProfile::new(self.space(), agents)
    }
}

/// All matchings of `items` items to `buyers` buyers, partial ones included.
#[derive(Clone, Debug)]
pub struct MatchingMarket {
    items: usize,
    /// `assignments[α][b]` is the item buyer `b` receives, if any.
    assignments: Vec<Vec<Option<usize>>>,
}

impl MatchingMarket {
    pub fn new(items: usize, buyers: usize, cap: usize) -> Result<Self> {
        positive("items", items)?;
        positive("buyers", buyers)?;
        let count = Self::count(items, buyers);
        check_cap(count, cap)?;
        let mut assignments = Vec::with_capacity(count as usize);
        let mut current = Vec::with_capacity(buyers);
        let mut used = vec![false; items];
        Self::enumerate(buyers, &mut used, &mut current, &mut assignments);
        Ok(Self { items, assignments })
    }

    /// `Σ_k C(items,k) C(buyers,k) k!`
    fn count(items: usize, buyers: usize) -> u128 {
        let mut total: u128 = 0;
        for k in 0..=items.min(buyers) {
            let mut term: u128 = 1;
            for t in 0..k {
                term = term.saturating_mul((items - t) as u128);
                term = term.saturating_mul((buyers - t) as u128);
                term /= (t + 1) as u128;
            }
            total = total.saturating_add(term);
        }
        total
    }

    fn enumerate(
        buyers: usize,
        used: &mut [bool],
        current: &mut Vec<Option<usize>>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if current.len() == buyers {
            out.push(current.clone());
            return;
        }
        current.push(None);
        Self::enumerate(buyers, used, current, out);
        current.pop();
        for item in 0..used.len() {
            if !used[item] {
                used[item] = true;
                current.push(Some(item));
                Self::enumerate(buyers, used, current, out);
                current.pop();
                used[item] = false;
            }
        }
    }

    pub fn num_allocations(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignment(&self, allocation: usize) -> &[Option<usize>] {
        &self.assignments[allocation]
    }

    pub fn space(&self) -> AllocationSpace {
        let labels = self
            .assignments
            .iter()
            .map(|m| {
                m.iter()
                    .enumerate()
                    .map(|(b, it)| match it {
                        Some(x) => format!("b{b}=item{x}"),
                        None => format!("b{b}=none"),
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        AllocationSpace::new(labels).expect("matching labels are distinct")
    }

    /// Profile from `values[buyer][item]`.
    pub fn profile(&self, values: &[Vec<f64>]) -> Result<TypeProfile> {
        let buyers = self.assignments[0].len();
        if values.len() != buyers || values.iter().any(|v| v.len() != self.items) {
            return Err(Error::InvalidProfile(
                "need one value per item for every buyer".into(),
            ));
        }
        let agents = (0..buyers)
            .map(|b| {
                TypeVector::new(
                    self.assignments
                        .iter()
                        .map(|m| m[b].map_or(0.0, |x| values[b][x]))
                        .collect(),
                )
            })
            .collect::<Result<_>>()?;
        TypeProfile::new(self.space(), agents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two unit-demand bidders, items X (0) and Y (1):
    /// v1(X)=v1(Y)=10, v2(X)=5, v2(Y)=4.
    pub(crate) fn two_item_instance() -> (CombinatorialAuction, TypeProfile) {
        let auction = CombinatorialAuction::new(2, 2, 4096).unwrap();
        // bundle masks: 0 = {}, 1 = {X}, 2 = {Y}, 3 = {X,Y}; unit demand takes the max.
        let v1 = vec![0.0, 10.0, 10.0, 10.0];
        let v2 = vec![0.0, 5.0, 4.0, 5.0];
        let profile = auction.profile(&[v1, v2]).unwrap();
        (auction, profile)
    }

    #[test]
    fn two_item_instance_welfare_and_allocation() {
        let (auction, profile) = two_item_instance();
        let (w, a) = welfare(&profile);
        assert_eq!(w, 15.0);
        assert_eq!(auction.bundle(a, 0), 0b10, "bidder 1 gets Y");
        assert_eq!(auction.bundle(a, 1), 0b01, "bidder 2 gets X");
    }

    #[test]
    fn zero_profile_picks_first_allocation() {
        let profile = TypeProfile::from_rows(vec![vec![0.0; 5]; 3]).unwrap();
        assert_eq!(welfare(&profile), (0.0, 0));
    }

    #[test]
    fn replacement_by_zero_and_by_self() {
        let (_, profile) = two_item_instance();
        let zero = TypeVector::zeros(profile.num_allocations());
        assert_eq!(welfare_with_replacement(&profile, 0, &zero).unwrap(), 5.0);
        let own = profile.agent(0).unwrap().clone();
        assert_eq!(
            welfare_with_replacement(&profile, 0, &own).unwrap(),
            welfare(&profile).0
        );
        assert!(matches!(
            welfare_with_replacement(&profile, 2, &zero),
            Err(Error::AgentOutOfRange { .. })
        ));
    }

    #[test]
    fn unit_error_replacement() {
        // others sum to (1, 3); a type with welfare 4 against them.
        let profile = TypeProfile::from_rows(vec![vec![4.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let weakest = TypeVector::new(vec![3.0, 0.0]).unwrap();
        assert_eq!(
            welfare_with_replacement(&profile, 0, &weakest).unwrap(),
            4.0
        );
        assert_eq!(welfare(&profile).0, 5.0);
    }

    #[test]
    fn generator_sizes() {
        let cfg = GeneratorConfig::default();
        let (space, _) = make_environment(
            &EnvKind::CombinatorialAuction {
                bidders: 2,
                items: 2,
            },
            1,
            &cfg,
        )
        .unwrap();
        assert_eq!(space.len(), 9);
        let (space, profile) = make_environment(
            &EnvKind::Matching {
                items: 3,
                buyers: 3,
            },
            1,
            &cfg,
        )
        .unwrap();
        assert_eq!(space.len(), 34);
        assert_eq!(profile.num_agents(), 3);
    }

    #[test]
    fn matching_count_matches_brute_force() {
        // Brute force: every map buyer -> item-or-none that is injective on items.
        for items in 1..=3usize {
            for buyers in 1..=3usize {
                let mut count = 0;
                let total = (items + 1).pow(buyers as u32);
                for code in 0..total {
                    let mut seen = vec![false; items];
                    let mut ok = true;
                    let mut c = code;
                    for _ in 0..buyers {
                        let choice = c % (items + 1);
                        c /= items + 1;
                        if choice > 0 {
                            if seen[choice - 1] {
                                ok = false;
                            }
                            seen[choice - 1] = true;
                        }
                    }
                    if ok {
                        count += 1;
                    }
                }
                let market = MatchingMarket::new(items, buyers, 4096).unwrap();
                assert_eq!(market.num_allocations(), count, "K_{{{items},{buyers}}}");
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let cfg = GeneratorConfig {
            cap: 8,
            ..Default::default()
        };
        let err = make_environment(
            &EnvKind::CombinatorialAuction {
                bidders: 2,
                items: 2,
            },
            0,
            &cfg,
        )
        .unwrap_err();
        assert_eq!(err, Error::CapExceeded { size: 9, cap: 8 });
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = GeneratorConfig::default();
        for kind in [
            EnvKind::CombinatorialAuction {
                bidders: 2,
                items: 3,
            },
            EnvKind::Matching {
                items: 2,
                buyers: 3,
            },
            EnvKind::SharedOutcome {
                agents: 4,
                outcomes: 5,
            },
            EnvKind::SingleItem { bidders: 3 },
        ] {
            let a = make_environment(&kind, 42, &cfg).unwrap();
            let b = make_environment(&kind, 42, &cfg).unwrap();
            assert_eq!(a, b);
            for t in a.1.agents() {
                assert!(t.as_slice().iter().all(|v| (0.0..=100.0).contains(v)));
            }
        }
    }

    #[test]
    fn profile_json_shape() {
        let profile = TypeProfile::from_rows(vec![vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
        let json = serde_json::to_string(&profile).unwrap();
        assert_eq!(
            json,
            r#"{"allocations":["a0","a1"],"agents":[[1.0,2.0],[0.5,0.0]]}"#
        );
        let back: TypeProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, profile);
        assert!(
            serde_json::from_str::<TypeProfile>(r#"{"allocations":["a0"],"agents":[[-1.0]]}"#)
                .is_err()
        );
    }

    #[test]
    fn outcome_settle_zeroes_excluded() {
        let profile = TypeProfile::from_rows(vec![vec![3.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let out = MechanismOutcome::settle(
            &profile,
            0,
            vec![2.0, 5.0],
            &[true, false],
            Draws::default(),
        );
        assert_eq!(out.payments, vec![2.0, 0.0]);
        assert_eq!(out.participants, vec![0]);
        assert_eq!(out.welfare, 3.0);
        assert_eq!(out.revenue, 2.0);
        assert!(out.is_consistent(&profile));
        assert_eq!(out.utility(1, profile.agent(1).unwrap()), 0.0);
    }

    fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..4, 1usize..6).prop_flat_map(|(n, m)| {
            proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, m), n)
        })
    }

    proptest! {
        #[test]
        fn welfare_matches_exhaustive_scan(rows in rows_strategy()) {
            let profile = TypeProfile::from_rows(rows.clone()).unwrap();
            let (w, a) = welfare(&profile);
            let m = rows[0].len();
            let best = (0..m)
                .map(|k| rows.iter().map(|r| r[k]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((w - best).abs() <= 1e-9);
            let at_a: f64 = rows.iter().map(|r| r[a]).sum();
            prop_assert!((at_a - best).abs() <= 1e-9);
        }

        #[test]
        fn welfare_is_homogeneous(rows in rows_strategy(), c in 0.1f64..10.0) {
            let profile = TypeProfile::from_rows(rows.clone()).unwrap();
            let scaled = TypeProfile::from_rows(
                rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect(),
            ).unwrap();
            let (w, a) = welfare(&profile);
            let (ws, as_) = welfare(&scaled);
            prop_assert!((ws - c * w).abs() <= 1e-9 * (1.0 + ws.abs()));
            prop_assert_eq!(a, as_);
        }

        #[test]
        fn welfare_is_monotone(rows in rows_strategy(), bump in 0.0f64..50.0, pick in 0usize..100) {
            let profile = TypeProfile::from_rows(rows.clone()).unwrap();
            let mut bumped = rows.clone();
            let i = pick % rows.len();
            let k = pick % rows[0].len();
            bumped[i][k] += bump;
            let bumped = TypeProfile::from_rows(bumped).unwrap();
            prop_assert!(welfare(&bumped).0 >= welfare(&profile).0);
        }

        #[test]
        fn duplicated_best_allocation_breaks_to_lowest(rows in rows_strategy()) {
            let mut dup = rows.clone();
            for r in dup.iter_mut() {
                let first = r[0];
                r.push(first);
            }
            let profile = TypeProfile::from_rows(dup).unwrap();
            let (_, a) = welfare(&profile);
            prop_assert!(a != rows[0].len());
        }
    }
}
