use std::fs;
use std::path::{Path, PathBuf};

use mechlab_core::analysis::{
    guarantee_report, monte_carlo, rows_by_lambda, sweep_rows, sweep_svg, write_sweep_csv,
    GuaranteeReport, MonteCarloReport, SweepAxis,
};
use mechlab_core::geometry::assess;
use mechlab_core::suites::{run_suite, SuiteOptions, SuiteReport, SUITES};
use mechlab_core::{vcg, welfare, MechanismOutcome, MechanismSpec, Predictor, TrialStreams};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::{CliError, CommonArgs};

const DEFAULT_OUT: &str = "out";

fn load(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    ExperimentConfig::load(path)
}

fn out_dir(args: &CommonArgs, cfg: Option<&ExperimentConfig>) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    write(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct AgentPrediction {
    agent: usize,
    weakest_type: Vec<f64>,
    min_welfare: f64,
    /// `w(0, θ_{-i})`
    baseline_welfare: f64,
    delta_err: f64,
    delta_vcg: f64,
}

#[derive(Debug, Serialize)]
struct RunReport {
    mechanism: String,
    seed: u64,
    trials: u64,
    allocation: usize,
    allocation_label: String,
    optimal_welfare: f64,
    vcg_revenue: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    predictions: Option<Vec<AgentPrediction>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    guarantees: Option<GuaranteeReport>,
    monte_carlo: MonteCarloReport,
}

fn predictors_of(spec: &MechanismSpec) -> Option<&[Predictor]> {
    match spec {
        MechanismSpec::WeakestTypeVcg { predictors }
        | MechanismSpec::ZetaZero { predictors, .. }
        | MechanismSpec::ZetaLambda { predictors, .. }
        | MechanismSpec::AffineMaximizer { predictors, .. }
        | MechanismSpec::Trust { predictors }
        | MechanismSpec::Discard { predictors, .. } => Some(predictors),
        _ => None,
    }
}

pub fn run(args: &CommonArgs) -> Result<u8, CliError> {
    let cfg = load(args)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let trials = args.trials.or(cfg.trials).unwrap_or(1);
    let workers = args.workers.or(cfg.workers).unwrap_or(0);
    let out = out_dir(args, Some(&cfg));

    let profile = cfg.profile()?;
    let spec = cfg.mechanism(&profile)?;
    let outcome: MechanismOutcome = spec.prepare(&profile)?.run(&TrialStreams::new(seed, 0))?;

    let predictions = match predictors_of(&spec) {
        Some(predictors) => Some(
            predictors
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let a = assess(&p.build(&profile, i)?, &profile, i)?;
                    Ok(AgentPrediction {
                        agent: i,
                        weakest_type: a.weakest.weakest.as_slice().to_vec(),
                        min_welfare: a.weakest.welfare,
                        baseline_welfare: a.baseline_welfare,
                        delta_err: a.measures.delta_err,
                        delta_vcg: a.measures.delta_vcg,
                    })
                })
                .collect::<Result<_, CliError>>()?,
        ),
        None => None,
    };
    let guarantees = match &spec {
        MechanismSpec::ZetaLambda { predictors, params } => Some(guarantee_report(
            &profile, predictors, params, trials, seed, workers,
        )?),
        _ => None,
    };
    let (optimal_welfare, allocation) = welfare(&profile);
    let report = RunReport {
        mechanism: spec.name().to_string(),
        seed,
        trials,
        allocation,
        allocation_label: profile
            .space()
            .label(allocation)
            .unwrap_or_default()
            .to_string(),
        optimal_welfare,
        vcg_revenue: vcg(&profile).revenue,
        predictions,
        guarantees,
        monte_carlo: monte_carlo(&spec, &profile, trials, seed, workers)?,
    };

    write_json(&out.join("outcome.json"), &outcome)?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "{}: allocation {} welfare {} revenue {} (mean over {} trials: welfare {:.6}, revenue {:.6})",
        report.mechanism,
        report.allocation_label,
        outcome.welfare,
        outcome.revenue,
        trials,
        report.monte_carlo.welfare.mean,
        report.monte_carlo.revenue.mean
    );
    println!("wrote {}", out.display());
    Ok(0)
}

pub fn verify(suite: &str, args: &CommonArgs) -> Result<u8, CliError> {
    let cfg = args.config.as_ref().map(|_| load(args)).transpose()?;
    let opts = SuiteOptions {
        seed: args.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0),
        workers: args
            .workers
            .or(cfg.as_ref().and_then(|c| c.workers))
            .unwrap_or(0),
        trials: args.trials.or(cfg.as_ref().and_then(|c| c.trials)),
    };
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else {
        vec![suite]
    };
    let reports = names
        .iter()
        .map(|name| run_suite(name, &opts))
        .collect::<Result<Vec<SuiteReport>, _>>()?;
    for r in &reports {
        for c in &r.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            println!("{verdict} {}: {} ({})", r.suite, c.name, c.detail);
        }
    }
    if args.out.is_some() || cfg.as_ref().is_some_and(|c| c.out.is_some()) {
        let out = out_dir(args, cfg.as_ref());
        write_json(&out.join(format!("verify_{suite}.json")), &reports)?;
    }
    let passed = reports.iter().all(SuiteReport::passed);
    println!(
        "{}",
        if passed {
            "all checks passed"
        } else {
            "some checks failed"
        }
    );
    Ok(if passed { 0 } else { 1 })
}

fn lambda_title(lambda: f64) -> String {
    let e = lambda.log2().round();
    if e.abs() < 1100.0 && e.exp2() == lambda {
        format!("λ = 2^{e}")
    } else {
        format!("λ = {lambda}")
    }
}

pub fn sweep(args: &CommonArgs) -> Result<u8, CliError> {
    let cfg = load(args)?;
    let mut sweep_cfg = cfg.sweep_config(args.trials)?;
    if let Some(seed) = args.seed {
        sweep_cfg.seed = seed;
    }
    let workers = args.workers.or(cfg.workers).unwrap_or(0);
    let out = out_dir(args, Some(&cfg));
    let rows = sweep_rows(&sweep_cfg, workers)?;

    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    write(&out.join("sweep.csv"), &csv)?;
    let x_label = match sweep_cfg.axis {
        SweepAxis::Zeta => "ζ",
        SweepAxis::DeltaErr => "Δerr",
    };
    let groups = rows_by_lambda(&rows);
    for (idx, (lambda, group)) in groups.iter().enumerate() {
        let svg = sweep_svg(group, &lambda_title(*lambda), x_label);
        write(&out.join(format!("sweep_lambda_{idx}.svg")), svg.as_bytes())?;
    }
    println!(
        "wrote {} rows and {} plots to {}",
        rows.len(),
        groups.len(),
        out.display()
    );
    Ok(0)
}
