//! Experiment configuration files.
//!
//! Configs are TOML by default; files ending in `.json` are parsed as JSON
//! with the same schema. See `configs/` for one example per setting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mechlab_core::analysis::{SweepAxis, SweepConfig};
use mechlab_core::env::{single_item_profile, CombinatorialAuction, MatchingMarket};
use mechlab_core::geometry::{BoundExpr, CellDensity, ConstraintTemplate, PartitionCell};
use mechlab_core::mechanisms::TuningParams;
use mechlab_core::{
    make_environment, AllocationSpace, AmParams, EnvKind, GeneratorConfig, MechanismSpec,
    PartitionPredictor, Predictor, PriorModel, Relation, SubspaceSpec, TypeProfile, TypeVector,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub environment: Option<EnvironmentConfig>,
    pub mechanism: Option<MechanismConfig>,
    /// One entry per agent, in agent order.
    #[serde(default)]
    pub predictors: Vec<PredictorConfig>,
    /// Partition predictors for the `generalized` mechanism.
    #[serde(default)]
    pub partitions: Vec<PartitionConfig>,
    pub sweep: Option<SweepSection>,
}

/// Exactly one way of building the type profile.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// Explicit profile: `agents[i][α]`, optionally with allocation labels.
    pub agents: Option<Vec<Vec<f64>>>,
    pub allocations: Option<Vec<String>>,
    /// Combinatorial auction with `valuations[bidder][bundle mask]`.
    pub auction: Option<AuctionConfig>,
    /// Matching market with `values[buyer][item]`.
    pub matching: Option<MatchingConfig>,
    /// Single item with one bid per bidder.
    pub single_item: Option<Vec<f64>>,
    /// Seeded random environment.
    pub generator: Option<GeneratorSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuctionConfig {
    pub items: usize,
    pub valuations: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingConfig {
    pub items: usize,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct GeneratorSection {
    #[serde(flatten)]
    pub kind: EnvKind,
    #[serde(default)]
    pub value_low: Option<f64>,
    #[serde(default)]
    pub value_high: Option<f64>,
    #[serde(default)]
    pub cap: Option<usize>,
    /// Defaults to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Constraint whose coefficients are keyed by allocation label or index.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub coeffs: BTreeMap<String, f64>,
    pub rel: Relation,
    pub bound: BoundExpr,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    /// No constraints means the uninformative prediction.
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
    pub density: Option<CellDensity>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub cells: Vec<CellConfig>,
    pub probabilities: Vec<f64>,
}

/// A scalar shared by all agents or one value per agent.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    All(f64),
    Each(Vec<f64>),
}

impl PerAgent {
    fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>, CliError> {
        match self {
            PerAgent::All(v) => Ok(vec![*v; n]),
            PerAgent::Each(vs) if vs.len() == n => Ok(vs.clone()),
            PerAgent::Each(vs) => Err(CliError::Config(format!(
                "{what} lists {} values for {n} agents",
                vs.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub name: String,
    pub zeta: Option<PerAgent>,
    pub lambda: Option<PerAgent>,
    /// `λ = 2^lambda_log2`, for scales too small to write as decimals.
    pub lambda_log2: Option<PerAgent>,
    pub beta: Option<f64>,
    pub omega: Option<PerAgent>,
    pub tau: Option<Vec<f64>>,
    pub bases: Option<Vec<Vec<Vec<f64>>>>,
    pub value_bound: Option<f64>,
    /// Prior shared by every agent.
    pub prior: Option<PriorModel>,
    pub priors: Option<Vec<PriorModel>>,
}

pub const MECHANISMS: [&str; 10] = [
    "vcg",
    "weakest_type_vcg",
    "zeta_zero",
    "zeta_lambda",
    "generalized",
    "subspace",
    "groves",
    "affine_maximizer",
    "trust",
    "discard",
];

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Option<Vec<f64>>,
    /// Inclusive arithmetic range, used when `values` is absent.
    pub range: Option<RangeSpec>,
    pub lambdas: Option<Vec<f64>>,
    pub lambda_log2: Option<Vec<i32>>,
    pub theta_star: f64,
    pub delta_vcg: f64,
    #[serde(default)]
    pub delta_err: f64,
    #[serde(default)]
    pub zeta: f64,
    pub trials: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn profile(&self) -> Result<TypeProfile, CliError> {
        let env = self
            .environment
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [environment] section".into()))?;
        let sources = [
            env.agents.is_some(),
            env.auction.is_some(),
            env.matching.is_some(),
            env.single_item.is_some(),
            env.generator.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(CliError::Config(
                "[environment] needs exactly one of agents, auction, matching, single_item, generator"
                    .into(),
            ));
        }
        if env.allocations.is_some() && env.agents.is_none() {
            return Err(CliError::Config(
                "allocations labels only apply to explicit agents".into(),
            ));
        }
        let profile = if let Some(rows) = &env.agents {
            let dim = rows.first().map_or(0, Vec::len);
            let space = match &env.allocations {
                Some(labels) => AllocationSpace::new(labels.clone())?,
                None => AllocationSpace::indexed(dim)?,
            };
            let agents = rows
                .iter()
                .map(|r| TypeVector::new(r.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            TypeProfile::new(space, agents)?
        } else if let Some(a) = &env.auction {
            CombinatorialAuction::new(a.valuations.len(), a.items, GeneratorConfig::default().cap)?
                .profile(&a.valuations)?
        } else if let Some(m) = &env.matching {
            MatchingMarket::new(m.items, m.values.len(), GeneratorConfig::default().cap)?
                .profile(&m.values)?
        } else if let Some(bids) = &env.single_item {
            single_item_profile(bids)?
        } else {
            let g = env.generator.as_ref().expect("one source is present");
            let defaults = GeneratorConfig::default();
            let cfg = GeneratorConfig {
                value_low: g.value_low.unwrap_or(defaults.value_low),
                value_high: g.value_high.unwrap_or(defaults.value_high),
                cap: g.cap.unwrap_or(defaults.cap),
            };
            make_environment(&g.kind, g.seed.unwrap_or(self.seed), &cfg)?.1
        };
        Ok(profile)
    }

    /// Predictors in agent order; missing entries are uninformative.
    pub fn predictors(&self, profile: &TypeProfile) -> Result<Vec<Predictor>, CliError> {
        let n = profile.num_agents();
        if self.predictors.len() > n {
            return Err(CliError::Config(format!(
                "{} predictors given for {n} agents",
                self.predictors.len()
            )));
        }
        (0..n)
            .map(|i| match self.predictors.get(i) {
                Some(p) => predictor(&p.constraints, profile),
                None => Ok(Predictor::uninformative()),
            })
            .collect()
    }

    fn partitions(&self, profile: &TypeProfile) -> Result<Vec<PartitionPredictor>, CliError> {
        let n = profile.num_agents();
        if self.partitions.is_empty() {
            // Fall back to single-cell partitions of the plain predictors.
            return Ok(self
                .predictors(profile)?
                .into_iter()
                .map(PartitionPredictor::single)
                .collect());
        }
        if self.partitions.len() != n {
            return Err(CliError::Config(format!(
                "{} partitions given for {n} agents",
                self.partitions.len()
            )));
        }
        self.partitions
            .iter()
            .map(|p| {
                Ok(PartitionPredictor {
                    cells: p
                        .cells
                        .iter()
                        .map(|c| {
                            Ok(PartitionCell {
                                predictor: predictor(&c.constraints, profile)?,
                                density: c.density.clone(),
                            })
                        })
                        .collect::<Result<_, CliError>>()?,
                    probabilities: p.probabilities.clone(),
                })
            })
            .collect()
    }

    pub fn mechanism(&self, profile: &TypeProfile) -> Result<MechanismSpec, CliError> {
        let m = self
            .mechanism
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [mechanism] section".into()))?;
        let n = profile.num_agents();
        let need = |v: &Option<PerAgent>, what: &str| -> Result<Vec<f64>, CliError> {
            v.as_ref()
                .ok_or_else(|| CliError::Config(format!("mechanism '{}' needs {what}", m.name)))?
                .expand(n, what)
        };
        let tuning = || -> Result<TuningParams, CliError> {
            let lambda = match (&m.lambda, &m.lambda_log2) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config(
                        "give lambda or lambda_log2, not both".into(),
                    ))
                }
                (None, Some(e)) => e
                    .expand(n, "lambda_log2")?
                    .iter()
                    .map(|e| e.exp2())
                    .collect(),
                _ => need(&m.lambda, "lambda")?,
            };
            Ok(TuningParams {
                zeta: need(&m.zeta, "zeta")?,
                lambda,
            })
        };
        let spec = match m.name.as_str() {
            "vcg" => MechanismSpec::Vcg,
            "weakest_type_vcg" => MechanismSpec::WeakestTypeVcg {
                predictors: self.predictors(profile)?,
            },
            "trust" => MechanismSpec::Trust {
                predictors: self.predictors(profile)?,
            },
            "zeta_zero" => MechanismSpec::ZetaZero {
                predictors: self.predictors(profile)?,
                zeta: need(&m.zeta, "zeta")?,
            },
            "zeta_lambda" => MechanismSpec::ZetaLambda {
                predictors: self.predictors(profile)?,
                params: tuning()?,
            },
            "generalized" => MechanismSpec::Generalized {
                partitions: self.partitions(profile)?,
                params: tuning()?,
            },
            "subspace" => MechanismSpec::Subspace {
                spec: SubspaceSpec {
                    bases: m
                        .bases
                        .clone()
                        .ok_or_else(|| CliError::Config("subspace needs bases".into()))?,
                    value_bound: m
                        .value_bound
                        .ok_or_else(|| CliError::Config("subspace needs value_bound".into()))?,
                },
            },
            "groves" => MechanismSpec::Groves {
                priors: match (&m.prior, &m.priors) {
                    (Some(p), None) => vec![p.clone(); n],
                    (None, Some(ps)) => ps.clone(),
                    _ => {
                        return Err(CliError::Config(
                            "groves needs exactly one of prior, priors".into(),
                        ))
                    }
                },
            },
            "affine_maximizer" => MechanismSpec::AffineMaximizer {
                predictors: self.predictors(profile)?,
                am: AmParams {
                    omega: match &m.omega {
                        Some(o) => o.expand(n, "omega")?,
                        None => vec![1.0; n],
                    },
                    tau: m
                        .tau
                        .clone()
                        .unwrap_or_else(|| vec![0.0; profile.num_allocations()]),
                },
            },
            "discard" => MechanismSpec::Discard {
                predictors: self.predictors(profile)?,
                beta: m
                    .beta
                    .ok_or_else(|| CliError::Config("discard needs beta".into()))?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown mechanism '{other}' (expected one of {})",
                    MECHANISMS.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    pub fn sweep_config(&self, trials: Option<u64>) -> Result<SweepConfig, CliError> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
        let values = match (&s.values, &s.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => expand_range(r)?,
            _ => {
                return Err(CliError::Config(
                    "sweep needs exactly one of values, range".into(),
                ))
            }
        };
        let lambdas = match (&s.lambdas, &s.lambda_log2) {
            (Some(l), None) => l.clone(),
            (None, Some(e)) => e.iter().map(|&e| (e as f64).exp2()).collect(),
            _ => {
                return Err(CliError::Config(
                    "sweep needs exactly one of lambdas, lambda_log2".into(),
                ))
            }
        };
        if values.is_empty() || lambdas.is_empty() {
            return Err(CliError::Config("sweep range is empty".into()));
        }
        Ok(SweepConfig {
            axis: s.axis,
            values,
            lambdas,
            theta_star: s.theta_star,
            delta_vcg: s.delta_vcg,
            delta_err: s.delta_err,
            zeta: s.zeta,
            trials: trials.or(s.trials).or(self.trials).unwrap_or(0),
            seed: self.seed,
        })
    }
}

fn expand_range(r: &RangeSpec) -> Result<Vec<f64>, CliError> {
    if !(r.step > 0.0 && r.start.is_finite() && r.stop.is_finite()) {
        return Err(CliError::Config(
            "range needs finite ends and a positive step".into(),
        ));
    }
    let count = ((r.stop - r.start) / r.step + 1e-9).floor();
    if count < 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..=count as usize)
        .map(|j| r.start + r.step * j as f64)
        .collect())
}

fn resolve_allocation(profile: &TypeProfile, key: &str) -> Result<usize, CliError> {
    if let Some(a) = profile.space().index_of(key) {
        return Ok(a);
    }
    key.parse::<usize>()
        .ok()
        .filter(|a| *a < profile.num_allocations())
        .ok_or_else(|| CliError::Config(format!("unknown allocation '{key}'")))
}

fn predictor(
    constraints: &[ConstraintConfig],
    profile: &TypeProfile,
) -> Result<Predictor, CliError> {
    Ok(Predictor {
        constraints: constraints
            .iter()
            .map(|c| {
                Ok(ConstraintTemplate {
                    coeffs: c
                        .coeffs
                        .iter()
                        .map(|(k, v)| Ok((resolve_allocation(profile, k)?, *v)))
                        .collect::<Result<_, CliError>>()?,
                    rel: c.rel,
                    bound: c.bound.clone(),
                })
            })
            .collect::<Result<_, CliError>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn explicit_profile_with_labels_and_predictor() {
        let cfg = parse(
            r#"
            seed = 1
            [environment]
            allocations = ["a1", "a2"]
            agents = [[4.0, 0.0], [1.0, 3.0]]
            [mechanism]
            name = "weakest_type_vcg"
            [[predictors]]
            constraints = [{ coeffs = { a1 = 1.0 }, rel = ">=", bound = 3.0 }]
            "#,
        );
        let profile = cfg.profile().unwrap();
        let preds = cfg.predictors(&profile).unwrap();
        assert_eq!(preds.len(), 2);
        assert_eq!(preds[0].constraints[0].coeffs.get(&0), Some(&1.0));
        assert!(preds[1].constraints.is_empty());
        assert!(matches!(
            cfg.mechanism(&profile).unwrap(),
            MechanismSpec::WeakestTypeVcg { .. }
        ));
    }

    #[test]
    fn report_dependent_bounds_parse() {
        let cfg = parse(
            r#"
            seed = 1
            [environment]
            agents = [[4.0, 0.0], [1.0, 3.0]]
            [[predictors]]
            constraints = [{ coeffs = { "1" = 1.0 }, rel = ">=", bound = { constant = 1.0, terms = [{ kind = "max_other", allocation = 1, scale = 0.5 }] } }]
            "#,
        );
        let profile = cfg.profile().unwrap();
        let p = &cfg.predictors(&profile).unwrap()[0];
        assert_eq!(p.build(&profile, 0).unwrap().constraints[0].bound, 2.5);
    }

    #[test]
    fn unknown_mechanism_and_bad_lengths_are_config_errors() {
        let cfg = parse(
            r#"
            seed = 1
            [environment]
            agents = [[1.0], [2.0]]
            [mechanism]
            name = "second_price"
            "#,
        );
        let profile = cfg.profile().unwrap();
        assert!(matches!(cfg.mechanism(&profile), Err(CliError::Config(_))));
        let cfg = parse(
            r#"
            seed = 1
            [environment]
            agents = [[1.0], [2.0]]
            [mechanism]
            name = "zeta_lambda"
            zeta = [1.0]
            lambda = 1.0
            "#,
        );
        assert!(matches!(cfg.mechanism(&profile), Err(CliError::Config(_))));
    }

    #[test]
    fn ranges_and_log_lambdas() {
        let cfg = parse(
            r#"
            seed = 3
            [sweep]
            axis = "zeta"
            range = { start = 0.0, stop = 1.0, step = 0.25 }
            lambda_log2 = [-100, -1]
            theta_star = 15.0
            delta_vcg = 10.0
            "#,
        );
        let s = cfg.sweep_config(None).unwrap();
        assert_eq!(s.values, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.lambdas, vec![2f64.powi(-100), 0.5]);
        assert_eq!(s.trials, 0);
        let empty = RangeSpec {
            start: 1.0,
            stop: 0.0,
            step: 0.5,
        };
        assert!(expand_range(&empty).unwrap().is_empty());
    }

    #[test]
    fn generator_environment_uses_experiment_seed() {
        let cfg = parse(
            r#"
            seed = 9
            [environment.generator]
            kind = "combinatorial_auction"
            bidders = 2
            items = 2
            "#,
        );
        let a = cfg.profile().unwrap();
        assert_eq!(a.num_allocations(), 9);
        assert_eq!(a, cfg.profile().unwrap());
    }

    #[test]
    fn missing_seed_is_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("trials = 3").is_err());
    }
}
