use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quench_ldp::io::{read_binary, read_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quench-ldp"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().arg("run").args(args).arg("--out").arg(out).output().unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        // the manifest records the output directory
        if n == "manifest.json" {
            continue;
        }
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn homogenize_writes_effective_table() {
    let dir = tempfile::tempdir().unwrap();
    let sine = config("sine.toml");
    let o = run(&["--config", sine.to_str().unwrap()], dir.path());
    assert_ok(&o);
    let (header, rows) = read_csv(&dir.path().join("effective.csv")).unwrap();
    assert_eq!(header, ["x0", "r0", "q00"]);
    let q_exact = 1.0 + 1.0 / (4.0 * std::f64::consts::PI.powi(2));
    assert!((rows[0][2] - q_exact).abs() < 1e-6, "{}", rows[0][2]);
    assert!(rows[0][1].abs() < 1e-10);
    let (side, xi) = read_binary(&dir.path().join("corrector_xi.bin")).unwrap();
    assert_eq!(side.shape, [4096, 1, 1]);
    // ξ = cos(2π(y + s))/(2π) for the sampled shift s
    let amp = xi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!((amp - 1.0 / std::f64::consts::TAU).abs() < 1e-6, "{amp}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seed"], 2024);
}

#[test]
fn missing_key_exits_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("sine.toml")).unwrap().replace("fast_dim = 1\n", "");
    let p = dir.path().join("bad.toml");
    fs::write(&p, text).unwrap();
    let o = run(&["--config", p.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("environment") && err.contains("fast_dim"), "{err}");
}

#[test]
fn unknown_key_exits_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("sine.toml")).unwrap().replace("[scales]", "[scales]\nepsilon = 0.1");
    let p = dir.path().join("bad.toml");
    fs::write(&p, text).unwrap();
    let o = run(&["--config", p.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scales"));
}

#[test]
fn numerical_failure_leaves_marker() {
    // drift in the fast variable without a gradient structure: no closed-form π
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("sine.toml"))
        .unwrap()
        .replace("tau1 = [", "f = [{ index = [0], amp = 1.0, kind = \"cos\", k = [1] }]\ntau1 = [");
    let p = dir.path().join("nograd.toml");
    fs::write(&p, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["--config", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(3));
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("density"), "{marker}");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let sine = config("sine.toml");
    let args = [
        "--config",
        sine.to_str().unwrap(),
        "--experiment",
        "estimate",
        "--eps",
        "0.3",
        "--replicas",
        "40",
        "--mode",
        "is",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&run(&args, &a));
    assert_ok(&run(&args, &b));
    same_files(&a, &b);
    let (_, rows) = read_csv(&a.join("replicas_is_eps0.csv")).unwrap();
    assert_eq!(rows.len(), 40);
    // thread count does not change results
    let c = dir.path().join("c");
    let o = bin()
        .env("QUENCH_LDP_THREADS", "1")
        .arg("run")
        .args(args)
        .arg("--out")
        .arg(&c)
        .output()
        .unwrap();
    assert_ok(&o);
    same_files(&a, &c);
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let grad = config("gradient.toml");
    let a = dir.path().join("a");
    assert_ok(&run(&["--config", grad.to_str().unwrap(), "--eps", "0.1"], &a));
    let b = dir.path().join("b");
    let manifest = a.join("manifest.json");
    assert_ok(&run(&["--config", manifest.to_str().unwrap()], &b));
    same_files(&a, &b);
    assert!(b.join("trajectory_eps0.bin.json").exists());
}

#[test]
fn estimate_subcommand_reports_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let sch = config("schilder.toml");
    let o = bin()
        .args(["estimate", "--config", sch.to_str().unwrap(), "--eps", "0.3,0.2,0.1", "--replicas", "200", "--mode", "is"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_ok(&o);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("estimate.json")).unwrap()).unwrap();
    assert_eq!(v["s_star"].as_f64().unwrap(), 0.5);
    let res = &v["results"][0];
    assert_eq!(res["mode"], "is");
    assert_eq!(res["estimates"].as_array().unwrap().len(), 3);
    assert_eq!(res["scaling"]["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn validate_reports_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["validate", "--config"]).arg(config("sine.toml")).output().unwrap();
    assert_ok(&o);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["errors"].as_array().unwrap().is_empty());
    assert!(r["warnings"].as_array().unwrap().is_empty());

    let text = fs::read_to_string(config("sine.toml"))
        .unwrap()
        .replace("delta_exponent = 1.5", "delta_exponent = 0.5");
    let p = dir.path().join("slow.toml");
    fs::write(&p, text).unwrap();
    let o = bin().args(["validate", "--config"]).arg(&p).output().unwrap();
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("regime ε/δ → ∞ violated"), "{out}");
}
