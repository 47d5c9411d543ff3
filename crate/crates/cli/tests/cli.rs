use std::path::Path;
use std::process::{Command, Output};

use jacspec::activations::ActivationSpec;
use jacspec::limit_dist::{limit_density, limit_grid, LimitClass, LimitSpec};
use jacspec::signal_prop::{qstar_fixed_point, FixedPointSettings};
use jacspec::{io, Execution};
use serde_json::Value;

fn jacspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jacspec"))
        .args(args)
        .env("JACSPEC_THREADS", "2")
        .output()
        .expect("spawn jacspec")
}

fn run_ok(args: &[&str]) -> Value {
    let out = jacspec(args);
    assert!(
        out.status.success(),
        "jacspec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("provenance JSON on stdout")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn relu_is_critical_at_sqrt_two() {
    let v = run_ok(&["fixed-point", "--activation.name", "relu"]);
    let r = &v["result"];
    assert!((r["sigma_w"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-6);
    assert!((r["chi"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(v["command"], "fixed-point");
    assert!(v["version"].is_string());
}

#[test]
fn linear_fixed_point_is_degenerate() {
    let v = run_ok(&[
        "fixed-point",
        "--activation.name",
        "linear",
        "--sigma-w",
        "1",
        "--sigma-b",
        "0",
    ]);
    assert_eq!(v["result"]["qstar"], 0.0);
    assert_eq!(v["result"]["degenerate"], true);
}

#[test]
fn fixed_point_matches_library() {
    let v = run_ok(&[
        "fixed-point",
        "--activation.name=tanh",
        "--sigma-w=1.2",
        "--sigma-b=0.05",
    ]);
    let fp = qstar_fixed_point(
        &ActivationSpec::named("tanh").unwrap(),
        1.2,
        0.05,
        &FixedPointSettings::default(),
    )
    .unwrap();
    assert_eq!(v["result"]["qstar"].as_f64().unwrap().to_bits(), fp.qstar.to_bits());
    assert_eq!(v["result"]["chi"].as_f64().unwrap().to_bits(), fp.chi.to_bits());
}

#[test]
fn config_file_and_overrides_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "fp.json",
        r#"{"activation": {"name": "hard_tanh"}, "sigma_b": 0.3, "settings": {"damping": 0.7}}"#,
    );
    let v = run_ok(&["fixed-point", "-c", &cfg, "--settings.max-iter", "20000"]);
    assert_eq!(v["config"]["settings"]["damping"], 0.7);
    assert_eq!(v["config"]["settings"]["max_iter"], 20000);
    assert_eq!(v["config"]["sigma_b"], 0.3);
    // defaults are echoed
    assert!(v["config"]["settings"]["tol"].is_number());
}

#[test]
fn limit_csv_is_byte_stable_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (p, flag) in [(&a, "--sequential"), (&b, "--threads=2")] {
        run_ok(&[
            flag,
            "limit",
            "--class",
            "bernoulli",
            "--sigma0-sq",
            "0.25",
            "--points",
            "120",
            "--domain",
            "squared_singular",
            "--output",
            p.to_str().unwrap(),
        ]);
    }
    let text_a = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text_a, std::fs::read_to_string(&b).unwrap());

    let spec = LimitSpec {
        class: LimitClass::Bernoulli,
        sigma0_sq: 0.25,
    };
    let grid = limit_grid(&spec, 120).unwrap();
    let d = limit_density(&spec, &grid, Execution::Sequential).unwrap();
    assert_eq!(text_a, io::density_csv(&d));
    assert!(text_a.starts_with("domain,x,rho\n"));
}

#[test]
fn moments_rerun_is_identical() {
    let args = [
        "moments",
        "--network.activation.name",
        "erf_main",
        "--network.depth",
        "8",
        "--network.sigma-b",
        "0.1",
    ];
    let a = run_ok(&args);
    let b = run_ok(&args);
    assert_eq!(a, b);
    let m1 = a["result"]["m1"].as_f64().unwrap();
    assert!((m1 - 1.0).abs() < 1e-9, "critical network should have m1 = 1, got {m1}");
}

#[test]
fn theory_spectrum_with_solver_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rho.csv");
    let v = run_ok(&[
        "theory-spectrum",
        "--network.activation.name",
        "relu",
        "--network.depth",
        "2",
        "--grid.points",
        "40",
        "--solver.step-base",
        "1.3",
        "--solver.half-steps",
        "60",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(v["config"]["solver"]["step_base"], 1.3);
    assert_eq!(v["result"]["failed_points"], 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.starts_with("singular,") || l.starts_with("atom,")));
}

#[test]
fn simulate_writes_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sv.csv");
    run_ok(&[
        "simulate",
        "--network.activation.name",
        "relu",
        "--network.depth",
        "3",
        "--network.width",
        "16",
        "--trials",
        "2",
        "--seed",
        "5",
        "--output",
        out.to_str().unwrap(),
    ]);
    let rows = io::read_spectrum_csv(&out).unwrap();
    assert_eq!(rows.len(), 32);
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 5);
}

#[test]
fn failures_exit_nonzero() {
    // supercritical linear network: the variance diverges
    let out = jacspec(&["fixed-point", "--activation.name", "linear", "--sigma-w", "1.5"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = jacspec(&[
        "moments",
        "--network.activation.name",
        "relu",
        "--network.depth",
        "3",
        "--bogus",
        "1",
    ]);
    assert!(!out.status.success());

    let out = jacspec(&["fixed-point", "--activation.name", "no_such_activation"]);
    assert!(!out.status.success());
}
