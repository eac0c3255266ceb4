use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::{commands, CliError, CommonArgs};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn args(config: Option<PathBuf>, out: &Path) -> CommonArgs {
    CommonArgs {
        config,
        seed: None,
        trials: None,
        workers: Some(1),
        out: Some(out.to_path_buf()),
    }
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn exit_code(result: Result<u8, CliError>) -> u8 {
    match result {
        Ok(code) => code,
        Err(e) => e.exit_code(),
    }
}

#[test]
fn unit_error_config_reports_unit_error() {
    let dir = TempDir::new().unwrap();
    let code = commands::run(&args(Some(configs().join("unit_error.toml")), dir.path())).unwrap();
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let p = &report["predictions"][0];
    assert_eq!(p["delta_err"].as_f64(), Some(1.0));
    assert_eq!(p["min_welfare"].as_f64(), Some(4.0));
    assert!(dir.path().join("outcome.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let mut common = args(Some(configs().join("zeta_lambda.toml")), dir.path());
        common.trials = Some(1);
        commands::run(&common).unwrap();
    }
    for file in ["outcome.json", "report.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn unknown_mechanism_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "bad.toml",
        "seed = 1\n[environment]\nagents = [[1.0, 2.0]]\n[mechanism]\nname = \"second_price\"\n",
    );
    assert_eq!(exit_code(commands::run(&args(Some(cfg), dir.path()))), 2);
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(exit_code(commands::run(&args(None, dir.path()))), 2);
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        exit_code(commands::run(&args(Some(missing), dir.path()))),
        2
    );
}

#[test]
fn empty_predictor_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "empty.toml",
        r#"seed = 1
[environment]
agents = [[4.0, 0.0], [1.0, 3.0]]
[mechanism]
name = "weakest_type_vcg"
[[predictors]]
constraints = [
  { coeffs = { "0" = 1.0 }, rel = ">=", bound = 2.0 },
  { coeffs = { "0" = 1.0 }, rel = "<=", bound = 1.0 },
]
"#,
    );
    assert_eq!(exit_code(commands::run(&args(Some(cfg), dir.path()))), 3);
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let mut common = args(None, dir.path());
    common.seed = Some(42);
    assert_eq!(exit_code(commands::verify("lp_oracle", &common)), 0);
    assert!(dir.path().join("verify_lp_oracle.json").exists());
    assert_eq!(exit_code(commands::verify("thm99", &common)), 2);
    common.trials = Some(2_000);
    assert_eq!(exit_code(commands::verify("thm7", &common)), 1);
}

const SINGLE_POINT: &str = r#"seed = 5
trials = 500
[sweep]
axis = "zeta"
range = { start = 1.0, stop = 1.0, step = 0.5 }
lambdas = [1.0]
theta_star = 15.0
delta_vcg = 10.0
delta_err = 2.0
"#;

#[test]
fn single_point_sweep_writes_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "one.toml", SINGLE_POINT);
    assert_eq!(commands::sweep(&args(Some(cfg), dir.path())).unwrap(), 0);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(dir.path().join("sweep_lambda_0.svg").exists());
}

#[test]
fn empty_sweep_range_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "empty.toml",
        &SINGLE_POINT.replace("start = 1.0, stop = 1.0", "start = 2.0, stop = 1.0"),
    );
    assert_eq!(exit_code(commands::sweep(&args(Some(cfg), dir.path()))), 2);
}

#[test]
fn sweep_rerun_is_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        commands::sweep(&args(
            Some(configs().join("payment_vs_zeta.toml")),
            dir.path(),
        ))
        .unwrap();
    }
    assert_eq!(
        fs::read(a.path().join("sweep.csv")).unwrap(),
        fs::read(b.path().join("sweep.csv")).unwrap()
    );
}

#[test]
fn bundled_configs_load() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = crate::config::ExperimentConfig::load(&path).unwrap();
        if cfg.sweep.is_some() {
            cfg.sweep_config(None).unwrap();
        } else {
            let profile = cfg.profile().unwrap();
            cfg.mechanism(&profile).unwrap();
        }
    }
}
