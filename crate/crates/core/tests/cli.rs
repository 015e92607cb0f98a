use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_singular-renewal"))
        .args(args)
        .env_remove("SINGULAR_RENEWAL_OUT")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_demo_exits_zero() {
    let out = run(&["validate", s(&config("demo.toml"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for id in ["A1", "A2", "A3", "A4", "A5"] {
        assert!(text.contains(id), "{text}");
    }
}

#[test]
fn validate_triple_intersection_exits_one() {
    let out = run(&["validate", s(&config("a4_violation.toml"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("triple singularity intersection"));
}

#[test]
fn malformed_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[domain\nmax_age = ").unwrap();
    assert_eq!(run(&["validate", s(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["validate", s(&dir.path().join("missing.toml"))]).status.code(), Some(2));
    assert_eq!(run(&["solve", s(&bad)]).status.code(), Some(2));
}

#[test]
fn solve_refuses_triple_intersection() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", s(&config("a4_violation.toml")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn too_coarse_grid_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", s(&config("demo.toml")), "--grid-step", "0.05", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn smooth_only_report_has_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", s(&config("smooth.toml")), "--grid-step", "0.004", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("singularities.json")).unwrap()).unwrap();
    assert_eq!(rep["events"].as_array().unwrap().len(), 0);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,v_r,u0_smooth"));
    let field = fs::read_to_string(dir.path().join("field_region_0.csv")).unwrap();
    assert!(field.starts_with("x,t,u_smooth"));
}

#[test]
fn demo_report_lists_events_and_rerun_is_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = run(&["solve", s(&config("demo.toml")), "--grid-step", "0.002", "--out", s(a.path())]);
    assert_eq!(out.status.code(), Some(0));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("singularities.json")).unwrap()).unwrap();
    let times: Vec<f64> = rep["event_times"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let expected = [0.35, 0.95, 1.55, 2.0, 2.15];
    assert_eq!(times.len(), expected.len());
    for (t, e) in times.iter().zip(expected) {
        assert!((t - e).abs() < 1e-9);
    }

    let manifest = a.path().join("manifest.json");
    let out = run(&["solve", s(&manifest), "--out", s(b.path())]);
    assert_eq!(out.status.code(), Some(0));
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }

    let out = run(&["report", s(a.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("5 emission events"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_singular-renewal"))
        .args(["solve", s(&config("delta_transport.toml")), "--grid-step", "0.004"])
        .env("SINGULAR_RENEWAL_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn verify_single_atom_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify",
        s(&config("delta_transport.toml")),
        "--grid-step",
        "0.004",
        "--eps-sequence",
        "0.032,0.016,0.008",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("probe,eps,pairing,extrapolate,hybrid,rel_err"));
}

#[test]
fn verify_with_unresolved_mollifier_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("coarse.toml");
    let text = fs::read_to_string(config("delta_transport.toml")).unwrap();
    fs::write(&cfg, format!("{text}\n[numerics]\noracle_step_ratio = 1.0\n")).unwrap();
    let out = run(&["verify", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn horizon_and_check_order_flags() {
    let out = run(&["validate", s(&config("demo.toml")), "--check-order", "40"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", s(&config("demo.toml")), "--horizon", "1.0", "--grid-step", "0.002", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("singularities.json")).unwrap()).unwrap();
    assert_eq!(rep["event_times"].as_array().unwrap().len(), 2);
}
