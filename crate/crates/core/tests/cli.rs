use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polar-qhd")).args(args).output().unwrap()
}

fn scenario(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const EIGEN: &str = r#"
chart = "polar"
grid.n_r = 400
grid.n_theta = 16
grid.r_max = 8.0
state.kind = "eigenstate"
state.alpha = 1.0
state.n_r = 0
"#;

const SIMULATE: &str = r#"
chart = "polar"
grid.n_r = 100
grid.n_theta = 16
grid.r_max = 8.0
state.kind = "eigenstate"
state.alpha = 1.0
state.n_r = 0
run.particles = 2000
run.dt = 0.001
run.steps = 20
run.seed = 5
run.direction = "both"
run.trajectory_particles = 4
"#;

#[test]
fn eigenstate_run_succeeds_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "eigen.toml", EIGEN);
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let first = run(&["eigenstate", "--config", &cfg, "--out", o]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let a = contents(&out);
    assert!(a.contains_key("eigenstate.csv") && a.contains_key("eigenstate_report.json"));
    let report = json(&out.join("eigenstate_report.json"));
    assert_eq!(report["winding"], 1);
    assert_eq!(report["quantized"], true);
    assert_eq!(run(&["eigenstate", "--config", &cfg, "--out", o]).status.code(), Some(0));
    assert_eq!(a, contents(&out));
}

#[test]
fn non_integer_alpha_exits_with_violation_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "half.toml", &EIGEN.replace("state.alpha = 1.0", "state.alpha = 0.5"));
    let out = run(&["eigenstate", "--config", &cfg, "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_config_lists_every_problem() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(
        tmp.path(),
        "bad.toml",
        "chart = \"polar\"\ngrid.n_r = 2\ngrid.r_maxx = 8.0\nstate.kind = \"eigenstate\"\nstate.alpha = 1.0\nphysics.m = -1\nrun.steps = 0\n",
    );
    let out = run(&["eigenstate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["r_maxx", "state: missing field `n_r`", "grid.n_r", "physics", "run.steps"] {
        assert!(err.contains(key), "missing {key} in: {err}");
    }
    let missing = run(&["eigenstate", "--config", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn simulate_is_seeded_and_honours_overrides() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario(tmp.path(), "sim.toml", SIMULATE);
    let dir = |name: &str| tmp.path().join(name);
    let go = |name: &str, extra: &[&str]| {
        let d = dir(name);
        let mut args = vec!["simulate", "--config", &cfg, "--out", d.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        contents(&d)
    };
    let a = go("a", &[]);
    let b = go("b", &[]);
    assert_eq!(a, b);
    for name in ["final_forward.csv", "final_backward.csv", "histogram_forward.csv", "drifts_backward.csv", "trajectories_forward.csv"] {
        assert!(a.contains_key(name), "{name}");
    }
    let c = go("c", &["--seed", "6"]);
    assert_ne!(a["final_forward.csv"], c["final_forward.csv"]);

    go("d", &["--particles", "500", "--format", "csv"]);
    let rows = fs::read_to_string(dir("d").join("final_forward.csv")).unwrap();
    assert_eq!(rows.lines().count(), 501);
    let report = fs::read_to_string(dir("d").join("simulate_report.csv")).unwrap();
    assert!(report.starts_with("key,value\n") && report.contains("run.particles,500"));
}

#[test]
fn evolve_writes_audits() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
chart = "polar"
grid.n_r = 100
grid.n_theta = 16
grid.r_max = 8.0
state.kind = "gaussian"
state.x0 = 1.0
state.sigma = 0.8
evolve.dt = 0.01
evolve.horizon = 0.1
evolve.audit_every = 5
"#;
    let cfg = scenario(tmp.path(), "evolve.toml", text);
    let out = tmp.path().join("out");
    let o = run(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let audits = fs::read_to_string(out.join("audits.csv")).unwrap();
    // header plus audits at steps 5 and 10
    assert_eq!(audits.lines().count(), 3, "{audits}");
    assert!(out.join("final_density.csv").exists() && out.join("evolve_report.json").exists());
}

#[test]
fn json_config_runs_the_cartesian_uncertainty() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{
  "chart": "cartesian",
  "grid": { "n_x": 128, "n_y": 128, "half_width": 6.0 },
  "state": { "kind": "gaussian", "sigma": 0.7, "kx": 0.5 }
}"#;
    let cfg = scenario(tmp.path(), "cart.json", text);
    let out = tmp.path().join("out");
    let o = run(&["uncertainty", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("uncertainty.csv").exists());
    let report = json(&out.join("uncertainty.json"));
    assert_eq!(report["config"]["chart"], "cartesian");
}
