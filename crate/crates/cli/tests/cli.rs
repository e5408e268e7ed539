use std::path::{Path, PathBuf};
use std::process::Command;

use exit_spectrum::{render_csv, render_json, render_text, run, CliError, RunConfig, RunReport};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exit-spectrum"))
}

fn birth_death_report() -> RunReport {
    run(&RunConfig::load(&example("birthdeath.json")).unwrap()).unwrap()
}

#[test]
fn birth_death_example_passes_every_check() {
    let report = birth_death_report();
    assert!((report.spectrum.lambda0 - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);
    assert!(report.all_passed(), "{:?}", report.failed);
    assert!(report.bounds_normalized.is_some());
    assert!(report.checks.iter().any(|c| c.name.starts_with("normalized: ")));
    let stages: Vec<&str> = report.timings.iter().map(|t| t.stage.as_str()).collect();
    assert_eq!(stages, ["build", "kill", "moments", "spectrum", "bounds"]);
}

#[test]
fn brownian_example_recovers_pi_squared() {
    let report = run(&RunConfig::load(&example("brownian01.json")).unwrap()).unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    assert!((report.spectrum.lambda0 - pi2).abs() <= 1e-4 * pi2);
    assert!(report.all_passed(), "{:?}", report.failed);
    assert_eq!(report.generator.domain_states, 999);
}

#[test]
fn json_report_round_trips_to_the_same_table() {
    let report = birth_death_report();
    let json = render_json(&report).unwrap();
    let back: RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert_eq!(render_text(&back), render_text(&report));
}

#[test]
fn csv_has_the_documented_columns() {
    let csv = render_csv(&birth_death_report()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,T_k,upper_odd,upper_ratio,lower_moment"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    let t1: f64 = first[1].parse().unwrap();
    assert!((t1 - 5.0).abs() < 1e-12);
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn conservative_chain_is_reported_by_the_solver() {
    let cfg = RunConfig::from_json(
        r#"{"model": {"chain": {"mu": [1, 1], "L": [[-1, 1], [1, -1]]}}, "omega": "all", "analysis": {"K": 4}}"#,
    )
    .unwrap();
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.module(), "killed_solver");
    assert!(matches!(err, CliError::Core(exit_spectrum_core::Error::Solver(_))));
}

#[test]
fn beta_at_lambda0_is_rejected() {
    let mut cfg = RunConfig::load(&example("birthdeath.json")).unwrap();
    cfg.analysis.betas = vec![0.5];
    assert_eq!(run(&cfg).unwrap_err().module(), "bounds");
}

#[test]
fn bad_potential_surfaces_as_an_expression_error() {
    let cfg = RunConfig::from_json(
        r#"{"model": {"diffusion": {"a": -1, "b": 1, "n": 20, "V": "log(x)"}}, "analysis": {"K": 3}}"#,
    )
    .unwrap();
    assert!(matches!(run(&cfg), Err(CliError::Expr { .. })));
    let cfg = RunConfig::from_json(
        r#"{"model": {"diffusion": {"a": 0, "b": 1, "n": 20, "V": "x +* 2"}}, "analysis": {"K": 3}}"#,
    )
    .unwrap();
    assert!(matches!(run(&cfg), Err(CliError::Expr { .. })));
}

#[test]
fn chain_file_resolves_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chain.json"), r#"{"mu": [2.0], "L": [[-0.5]]}"#).unwrap();
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, r#"{"model": {"chain": {"path": "chain.json"}}, "analysis": {"K": 3}}"#).unwrap();
    let report = run(&RunConfig::load(&cfg_path).unwrap()).unwrap();
    assert!((report.spectrum.lambda0 - 0.5).abs() < 1e-15);
    assert!(report.all_passed());
}

#[test]
fn fractional_and_time_changed_models_run() {
    let cfg = RunConfig::from_json(
        r#"{"model": {"fractional": {"a": -1, "b": 1, "n": 200, "alpha": 1}}, "analysis": {"K": 8, "beta": [0.5]}}"#,
    )
    .unwrap();
    let report = run(&cfg).unwrap();
    assert!(report.all_passed(), "{:?}", report.failed);
    let r = report.reference.unwrap();
    assert!((r.lower - 1.0).abs() < 1e-12);
    let cfg = RunConfig::from_json(
        r#"{"model": {"timechanged": {"R": 20, "n": 200, "alpha": 1.5, "sigma": "sqrt(1+x^2)"}}, "analysis": {"K": 8}}"#,
    )
    .unwrap();
    let report = run(&cfg).unwrap();
    assert!(report.all_passed(), "{:?}", report.failed);
    assert!(report.reference.unwrap().holds);
}

#[test]
fn monte_carlo_section_is_attached() {
    let mut cfg = RunConfig::load(&example("birthdeath.json")).unwrap();
    cfg.analysis.mc = Some(exit_spectrum_core::McConfig::new(
        20_000,
        7,
        2,
        exit_spectrum_core::Scheme::ExactJump,
        0.0,
    ));
    let report = run(&cfg).unwrap();
    let mc = report.mc.as_ref().unwrap();
    let z = mc.z_scores.as_ref().unwrap();
    assert_eq!(z.len(), 2);
    assert!(z.iter().all(|z| z.z.abs() < 5.0));
    assert_eq!(report.timings.last().unwrap().stage, "montecarlo");
    let back: RunReport = serde_json::from_str(&render_json(&report).unwrap()).unwrap();
    assert_eq!(render_text(&back), render_text(&report));
}

#[test]
fn exit_codes() {
    let ok = binary().args(["run"]).arg(example("birthdeath.json")).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("lambda0 = 3.8196601125"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("conservative.json");
    std::fs::write(&bad, r#"{"model": {"chain": {"mu": [1, 1], "L": [[-1, 1], [1, -1]]}}, "analysis": {"K": 4}}"#)
        .unwrap();
    let err = binary().arg("run").arg(&bad).output().unwrap();
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("[killed_solver]"));

    let missing = binary().args(["run", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn run_writes_json_that_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = binary()
        .arg("run")
        .arg(example("birthdeath.json"))
        .arg("--out")
        .arg(&out)
        .args(["--format", "json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.all_passed());
}

#[test]
fn bounds_and_mc_subcommands() {
    let out = binary()
        .arg("bounds")
        .arg(example("birthdeath.json"))
        .args(["-K", "6", "--beta", "0.1", "--format", "csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 7);

    let out = binary()
        .arg("mc")
        .arg(example("birthdeath.json"))
        .args(["--paths", "5000", "--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("monte carlo: 5000 paths"));
}
