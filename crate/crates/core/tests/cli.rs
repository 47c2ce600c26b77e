use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_renewal2t");

const THRESHOLD_RUN: &str = r#"{
    "grid": {"delta": 0.05, "s_max": 6, "d_max": 6},
    "spec": {"terms": [{"kind": "s_threshold", "theta": "identity"}, {"kind": "diff_threshold", "theta": "identity"}],
             "p0": 1.0, "sigma": 1.0, "p_inf": 2.0},
    "initial": "exp_a",
    "t_end": 4,
    "snapshot_every": 2
}"#;

const CONSTANT_RUN: &str = r#"{
    "grid": {"delta": 0.05, "s_max": 14, "d_max": 14},
    "spec": {"terms": [{"kind": "constant", "c": 1.0}], "p0": 1.0, "sigma": 0.5, "p_inf": 1.0},
    "initial": "exp_a",
    "t_end": 4
}"#;

// linear problem whose rate vanishes on the reachable cells
const NO_STEADY_STATE: &str = r#"{
    "grid": {"delta": 0.05, "s_max": 6, "d_max": 6},
    "spec": {"terms": [{"kind": "diff_threshold", "theta": "identity"}], "p0": 1.0, "sigma": 0.5, "p_inf": 1.0},
    "initial": "exp_a",
    "t_end": 2,
    "coupling": {"mode": "frozen", "x": 0.5}
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("RENEWAL2T_THREADS", n),
        None => cmd.env_remove("RENEWAL2T_THREADS"),
    };
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&run(&[], None)), 64);
    assert_eq!(code(&run(&["example", "4"], None)), 64);
    assert_eq!(code(&run(&["simulate", "--coupling", "sometimes"], None)), 64);
    assert_eq!(code(&run(&["--help"], None)), 0);
}

#[test]
fn invalid_config_exits_64_and_names_each_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = THRESHOLD_RUN.replace("\"delta\": 0.05", "\"delta\": 0.07");
    let cfg = write_config(dir.path(), &bad);
    let out = run(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(code(&out), 64);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("grid.s_max") && err.contains("spec.sigma"), "{err}");
    let bad_threads = run(&["simulate", "--config", &cfg], Some("zero"));
    assert_eq!(code(&bad_threads), 64);
}

#[test]
fn simulate_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), THRESHOLD_RUN);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = run(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()], Some(threads));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(out_dir);
    }
    let mut names: Vec<String> = std::fs::read_dir(&outputs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for want in ["trace.csv", "flux.csv", "summary.json", "manifest.json", "snapshot_00000040.csv", "snapshot_00000080.csv"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    for name in &names {
        let a = std::fs::read(outputs[0].join(name)).unwrap();
        let b = std::fs::read(outputs[1].join(name)).unwrap();
        assert!(a == b, "{name} differs between thread counts");
    }
    let trace = std::fs::read_to_string(outputs[0].join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("t,X,mass,lost_tail,picard_iters"));
    assert_eq!(trace.lines().count(), 1 + 81);
}

#[test]
fn steady_without_a_steady_state_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), NO_STEADY_STATE);
    let out = run(&["steady", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let err: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn steady_writes_the_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONSTANT_RUN);
    let out = run(&["steady", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("steady.json")).unwrap()).unwrap();
    // unit rate: each step fires 1 - e^{-delta} of the mass
    let x = summary["X_star"].as_f64().unwrap();
    let want = (1.0 - (-0.05f64).exp()) / 0.05;
    assert!((x - want).abs() < 1e-5, "{summary}");
}

#[test]
fn verify_passes_and_catches_an_injected_defect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONSTANT_RUN);
    let good = dir.path().join("good");
    let out = run(&["verify", "--config", &cfg, "--out", good.to_str().unwrap()], None);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(stdout.contains("PASS one-time reduction"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(good.join("verification.json")).unwrap()).unwrap();
    assert_eq!(report["all_passed"], true);

    let bad = dir.path().join("bad");
    let out = run(
        &["verify", "--config", &cfg, "--out", bad.to_str().unwrap(), "--inject-conservation-defect"],
        None,
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 1, "{stdout}");
    assert!(stdout.contains("FAIL per-step conservation"), "{stdout}");
}

#[test]
fn reduce_and_example_3a_write_the_one_time_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["example", "3a", "--out", dir.path().to_str().unwrap(), "--delta", "0.05", "--t-end", "5"],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["config.json", "trace_1d.csv", "residual.csv", "summary.json", "manifest.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["max_identity_residual"].as_f64().unwrap() < 0.1, "{summary}");

    let cfg = write_config(dir.path(), THRESHOLD_RUN);
    assert_eq!(code(&run(&["reduce", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None)), 64);
}
