use std::path::Path;
use std::process::{Command, Output};

fn fpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpc")).args(args).output().expect("spawn fpc")
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn counterexample_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = fpc(&["--out", out, "--tag", "smoke", "counterexample"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("counterexample-smoke");
    let cert = read_json(&dir.join("certificate.json"));
    assert_eq!(cert["passed"], serde_json::Value::Bool(true));
    assert!(dir.join("report.json").exists());
    assert!(dir.join("phi.csv").exists());
}

#[test]
fn missing_horizon_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"grid": {"nx": 8, "ny": 8}, "time": {"nt": 4}}"#).unwrap();
    let o = fpc(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "forward"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`T`"));
}

#[test]
fn nonpositive_penalty_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    for k in ["0", "-1"] {
        let set = format!("hum.k={k}");
        let o = fpc(&["--out", tmp.path().to_str().unwrap(), "--set", &set, "hum"]);
        assert_eq!(o.status.code(), Some(2), "k = {k}");
    }
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(fpc(&["teleport"]).status.code(), Some(2));
}

#[test]
fn particles_deterministic_for_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let run = |tag: &str, seed: &str| {
        let o = fpc(&[
            "--out", out, "--tag", tag, "--seed", seed,
            "--set", "particles.n_particles=3000",
            "--set", "particles.dt_sde=1e-3",
            "--set", "particles.t_final=0.05",
            "--set", "particles.output_times=[0.05]",
            "particles",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        read_json(&tmp.path().join(format!("particles-{tag}")).join("report.json"))["result"].clone()
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn hum_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fpc(&[
        "--out", tmp.path().to_str().unwrap(), "--tag", "h",
        "--set", "grid.nx=8", "--set", "grid.ny=8", "--set", "time.nt=8",
        "hum",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = read_json(&tmp.path().join("hum-h").join("report.json"));
    assert_eq!(rep["subcommand"], "hum");
    assert!(rep["result"]["terminal_norm"].as_f64().unwrap().is_finite());
}
