use std::fs;
use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

const EX2_PAIR: &str = r#"{"dimension": 3, "components": 2, "terms": [
    {"type": "separable_power", "component": 0, "mu": 0.5, "p": 3.3333333333333335},
    {"type": "separable_power", "component": 1, "mu": 0.5, "p": 3.3333333333333335},
    {"type": "separable_power", "component": 0, "mu": 1.0, "p": 4.0},
    {"type": "separable_power", "component": 1, "mu": 1.0, "p": 4.0},
    {"type": "sobolev_critical", "theta": [1.0, 1.0]}]}"#;

const QUARTIC: &str = r#"{"dimension": 3, "components": 1, "terms": [
    {"type": "separable_power", "component": 0, "mu": 1.0, "p": 4.0}]}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nls-ground")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn run_cfg(scenario: &str, cfg: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let mut args = vec![scenario, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn svg_is_well_formed(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

#[test]
fn solve_writes_report_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "solve.json",
        &format!(
            r#"{{"version": 1, "scenario": "solve", "spec": {EX2_PAIR},
                "grid": {{"r_max": 8.0, "nodes": 600}}, "solve": {{"rho": [1.0, 1.0], "starts": 2}}}}"#
        ),
    );
    let out = tmp.path().join("out");
    let (code, err) = run_cfg("solve", &cfg, &out, &[]);
    assert_eq!(code, 0, "{err}");
    for f in ["report.json", "summary.txt", "state.csv", "log.csv", "fiber_scan.csv", "fiber_scan.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    let state = fs::read_to_string(out.join("state.csv")).unwrap();
    assert!(state.starts_with("r,u_1,u_2\n"));
    assert_eq!(state.lines().count(), 601);
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("threshold"));
    svg_is_well_formed(&out.join("fiber_scan.svg"));
}

#[test]
fn malformed_config_is_a_parse_error_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for (i, body) in [
        "{ not json".to_string(),
        format!(r#"{{"version": 1, "scenario": "solve", "spec": {QUARTIC}, "bogus": 1}}"#),
        format!(r#"{{"version": 7, "scenario": "solve", "spec": {QUARTIC}}}"#),
        r#"{"version": 1, "scenario": "solve", "spec": {"dimension": 3, "components": 1, "terms": [
            {"type": "separable_power", "component": 0, "mu": 1.0, "p": 9.0}]}}"#
            .to_string(),
    ]
    .iter()
    .enumerate()
    {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), body);
        let (code, _) = run_cfg("solve", &cfg, &out, &[]);
        assert_eq!(code, 2, "case {i}");
        assert!(!out.exists(), "case {i} left outputs");
    }
    let cfg = write_config(
        tmp.path(),
        "gn.json",
        r#"{"version": 1, "scenario": "gn", "axes": {"p": [3.0]}}"#,
    );
    let (code, _) = run_cfg("solve", &cfg, &out, &[]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let (code, _) = run_cfg("solve", &tmp.path().join("absent.json"), &tmp.path().join("out"), &[]);
    assert_eq!(code, 5);
}

#[test]
fn audit_gate_blocks_unless_forced() {
    let tmp = TempDir::new().unwrap();
    let spec = r#"{"dimension": 3, "components": 1, "terms": [
        {"type": "separable_power", "component": 0, "mu": 40.0, "p": 3.3333333333333335},
        {"type": "separable_power", "component": 0, "mu": 1.0, "p": 4.0}]}"#;
    let cfg = write_config(
        tmp.path(),
        "solve.json",
        &format!(
            r#"{{"version": 1, "scenario": "solve", "spec": {spec},
                "grid": {{"r_max": 2.0, "nodes": 400}}, "solve": {{"rho": [1.0], "starts": 1}}}}"#
        ),
    );
    let out = tmp.path().join("out");
    let (code, err) = run_cfg("solve", &cfg, &out, &[]);
    assert_eq!(code, 3, "{err}");
    assert!(!out.exists());
    let audit_cfg = write_config(
        tmp.path(),
        "audit.json",
        &format!(r#"{{"version": 1, "scenario": "audit", "spec": {spec}, "solve": {{"rho": [1.0]}}}}"#),
    );
    let audit_out = tmp.path().join("audit");
    let (code, _) = run_cfg("audit", &audit_cfg, &audit_out, &[]);
    assert_eq!(code, 3);
    assert!(audit_out.join("audit.json").exists());
    let (code, _) = run_cfg("solve", &cfg, &out, &["--force"]);
    assert!(code == 0 || code == 1 || code == 4, "forced run exit {code}");
}

#[test]
fn non_convergence_has_its_own_exit_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "solve.json",
        &format!(
            r#"{{"version": 1, "scenario": "solve", "spec": {QUARTIC},
                "grid": {{"r_max": 1.2, "nodes": 400}}, "solve": {{"rho": [1.0], "starts": 1, "max_iters": 2}}}}"#
        ),
    );
    let out = tmp.path().join("out");
    let (code, _) = run_cfg("solve", &cfg, &out, &[]);
    assert_eq!(code, 4);
    assert!(out.join("report.json").exists());
}

fn sweep_config(dir: &Path) -> std::path::PathBuf {
    write_config(
        dir,
        "sweep.json",
        &format!(
            r#"{{"version": 1, "scenario": "sweep-rho", "spec": {QUARTIC},
                "grid": {{"r_max": 1.2, "nodes": 500, "rho_scaling": 2.0}},
                "solve": {{"starts": 2, "seed": 11}},
                "axes": {{"rho": [[0.25], [0.5], [0.75], [1.0], [1.5], [0.5]]}}}}"#
        ),
    )
}

#[test]
fn sweep_rho_writes_one_row_per_bound() {
    let tmp = TempDir::new().unwrap();
    let cfg = sweep_config(tmp.path());
    let out = tmp.path().join("out");
    let (code, err) = run_cfg("sweep-rho", &cfg, &out, &[]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(out.join("energy_map.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rho_1,c,lambda_1,sat_1");
    assert_eq!(lines.len(), 6);
    let c: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(c.windows(2).take(3).all(|w| w[1] < w[0]));
    svg_is_well_formed(&out.join("energy_map.svg"));
}

#[test]
fn sweep_output_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = sweep_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_cfg("sweep-rho", &cfg, &a, &["--threads", "1"]).0, 0);
    assert_eq!(run_cfg("sweep-rho", &cfg, &b, &["--threads", "2"]).0, 0);
    for f in ["energy_map.csv", "energy_map.json", "energy_map.svg", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = tmp.path().join("c");
    assert_eq!(run_cfg("sweep-rho", &cfg, &c, &["--seed", "12"]).0, 0);
}

#[test]
fn gn_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "gn.json",
        r#"{"version": 1, "scenario": "gn", "axes": {"p": [3.0, 3.3333333333333335, 4.0, 6.0]}}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run_cfg("gn", &cfg, &out, &[]).0, 0);
    let csv = fs::read_to_string(out.join("gn.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!((rows[2][2] - 0.449257).abs() < 1e-5);
    assert!((rows[3][1] - 1.0).abs() < 1e-12);
    svg_is_well_formed(&out.join("gn.svg"));
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["solve"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        nls_ground::experiments::ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 8);
}
