use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use mechlab_core::suites::{run_suite, SuiteOptions, SuiteReport};
use tempfile::TempDir;

const SEED: u64 = 42;

fn report_line(id: u32, title: &str, reports: &[SuiteReport]) -> bool {
    let passed = reports.iter().all(SuiteReport::passed);
    let total: usize = reports.iter().map(|r| r.checks.len()).sum();
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.failures()
                .map(move |c| format!("{}/{}: {}", r.suite, c.name, c.detail))
        })
        .collect();
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!(
        "{verdict} criterion {id}: {title} ({}/{total} checks)",
        total - failed.len()
    );
    for f in &failed {
        println!("    {f}");
    }
    passed
}

fn criterion(id: u32, title: &str, suites: &[&str]) -> bool {
    let opts = SuiteOptions::new(SEED);
    let reports: Vec<SuiteReport> = suites
        .iter()
        .map(|s| run_suite(s, &opts).unwrap())
        .collect();
    report_line(id, title, &reports)
}

fn criterion_01_lp_oracle_equivalence() -> bool {
    criterion(
        1,
        "weakest-type LP and constraint generation match vertex enumeration",
        &["lp_oracle"],
    )
}

fn criterion_02_conservative_revenue_is_exact() -> bool {
    criterion(
        2,
        "conservative predictors give revenue OPT - Σerr and welfare OPT",
        &["thm2"],
    )
}

fn criterion_03_doubling_closed_forms() -> bool {
    criterion(
        3,
        "doubling rule value and payment closed forms and bound",
        &["thm5", "thm6"],
    )
}

fn criterion_04_default_tuning_consistency_and_robustness() -> bool {
    criterion(
        4,
        "default tuning consistency and robustness ratios",
        &["thm7"],
    )
}

fn criterion_05_baselines() -> bool {
    criterion(
        5,
        "trust-completely and discard-with-β baselines",
        &["baselines"],
    )
}

fn criterion_06_subspace_predictions() -> bool {
    criterion(
        6,
        "subspace predictor welfare and revenue bounds",
        &["thm9"],
    )
}

fn criterion_07_weakest_price_floor() -> bool {
    criterion(
        7,
        "payments never fall below the weakest type's value",
        &["price_floor"],
    )
}

fn criterion_08_optimal_auction_recovery() -> bool {
    criterion(
        8,
        "uniform prior recovers reserve 0.5 and the optimal revenue",
        &["myerson"],
    )
}

fn criterion_09_incentives() -> bool {
    criterion(
        9,
        "truthfulness, participation and affine maximizer identity",
        &["ic"],
    )
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn mechlab(args: &[&str], out: &Path, workers: usize) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_mechlab"))
        .args(args)
        .arg("--workers")
        .arg(workers.to_string())
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
        .status;
    status.code().unwrap()
}

type Files = Vec<(String, Vec<u8>)>;

fn output_files(dir: &Path) -> Files {
    let mut files: Files = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_10_outputs_do_not_depend_on_worker_count() -> bool {
    let zeta = configs().join("zeta_lambda.toml");
    let payment = configs().join("payment_vs_zeta.toml");
    let (zeta, payment) = (zeta.to_str().unwrap(), payment.to_str().unwrap());
    let invocations: Vec<(&str, Vec<&str>)> = vec![
        ("run", vec!["run", "--config", zeta, "--trials", "5000"]),
        (
            "sweep",
            vec!["sweep", "--config", payment, "--trials", "3000"],
        ),
        (
            "verify",
            vec!["verify", "thm6", "--seed", "9", "--trials", "3000"],
        ),
        (
            "verify",
            vec!["verify", "baselines", "--seed", "9", "--trials", "3000"],
        ),
    ];
    let mut mismatches = Vec::new();
    for (label, args) in &invocations {
        let runs: Vec<(i32, Files)> = [1, 4]
            .iter()
            .map(|&workers| {
                let dir = TempDir::new().unwrap();
                let code = mechlab(args, dir.path(), workers);
                (code, output_files(dir.path()))
            })
            .collect();
        assert!(!runs[0].1.is_empty(), "{label} wrote nothing");
        if runs[0] != runs[1] {
            mismatches.push(format!("{label} {}", args[1]));
        }
    }
    let passed = mismatches.is_empty();
    println!(
        "{} criterion 10: run, sweep and verify outputs identical across 1 and 4 workers ({}/{} invocations)",
        if passed { "PASS" } else { "FAIL" },
        invocations.len() - mismatches.len(),
        invocations.len()
    );
    for m in &mismatches {
        println!("    {m}");
    }
    passed
}

fn main() -> ExitCode {
    let criteria: [fn() -> bool; 10] = [
        criterion_01_lp_oracle_equivalence,
        criterion_02_conservative_revenue_is_exact,
        criterion_03_doubling_closed_forms,
        criterion_04_default_tuning_consistency_and_robustness,
        criterion_05_baselines,
        criterion_06_subspace_predictions,
        criterion_07_weakest_price_floor,
        criterion_08_optimal_auction_recovery,
        criterion_09_incentives,
        criterion_10_outputs_do_not_depend_on_worker_count,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
