use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gslab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gslab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("not JSON: {text}"))
}

#[test]
fn solve_example_one_matches_the_exact_solution() {
    let dir = TempDir::new().unwrap();
    let o = gslab(
        &["solve", "--example", "1", "--sigma", "0.5", "--s", "1.8", "--n", "1024", "--L", "40", "--dt", "1e-3", "--T", "0.5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "final_state.csv", "report.json", "trace.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let r = report(dir.path());
    assert_eq!(r["pass"], true);
    assert!(r["results"]["linf_error"].as_f64().unwrap() <= 1e-3);
    let state = std::fs::read_to_string(dir.path().join("final_state.csv")).unwrap();
    assert!(state.starts_with("x,re,im\n"));
    assert_eq!(state.lines().count(), 1025);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,"));
    assert!(trace.lines().next().unwrap().ends_with(",boundary_mag"));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["solve", "--n", "256", "--L", "20", "--dt", "1e-2", "--T", "0.2", "--tol", "1"];
    assert_eq!(gslab(&args, a.path()).status.code(), Some(0));
    assert_eq!(gslab(&args, b.path()).status.code(), Some(0));
    for f in ["trace.csv", "final_state.csv", "trace.svg", "report.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failing_check_exits_one() {
    let dir = TempDir::new().unwrap();
    // coarse steps cannot meet a tight tolerance
    let o = gslab(&["solve", "--n", "256", "--L", "20", "--dt", "0.1", "--T", "0.5", "--tol", "1e-12"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(report(dir.path())["pass"], false);
}

#[test]
fn bad_input_exits_two_with_error_json() {
    let dir = TempDir::new().unwrap();
    let cases: [&[&str]; 5] = [
        &["solve", "--n", "1000"],
        &["solve", "--config", "/definitely/missing.json"],
        &["verify-example", "--example", "4"],
        &["solve", "--dt", "0.3", "--T", "0.5"],
        &["conjugation-check", "--h", "10,5"],
    ];
    for args in cases {
        let o = gslab(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let e = error_json(&o);
        assert!(e["error"]["message"].is_string(), "{args:?}");
        assert!(!dir.path().join("report.json").exists());
    }
    let o = gslab(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"n": 128, "L": 20.0, "dt": 0.01, "T": 0.2, "tol": 1.0}"#).unwrap();
    let out = dir.path().join("out");
    let o = gslab(&["solve", "--config", cfg.to_str().unwrap(), "--n", "256"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["config"]["n"], 256);
    assert_eq!(r["config"]["L"], 20.0);

    std::fs::write(&cfg, r#"{"n": 128, "bogus": 1}"#).unwrap();
    assert_eq!(gslab(&["solve", "--config", cfg.to_str().unwrap()], &out).status.code(), Some(2));
}

#[test]
fn verify_example_defaults_pass() {
    let dir = TempDir::new().unwrap();
    let o = gslab(&["verify-example", "--example", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert!(r["results"]["residual_max"].as_f64().unwrap() <= 1e-12);
    assert_eq!(r["results"]["hypothesis"]["pass"], true);
    assert_eq!(r["results"]["datum_membership"], "convergent");
}

#[test]
fn verify_example_two_recovers_the_loss() {
    let dir = TempDir::new().unwrap();
    let o = gslab(&["verify-example", "--example", "2", "--sigma", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let loss = report(dir.path())["results"]["loss"].as_array().unwrap().clone();
    assert_eq!(loss.len(), 2);
    for entry in loss {
        let (t, d) = (entry["t"].as_f64().unwrap(), entry["infimal_delta"].as_f64().unwrap());
        assert!((d - t).abs() <= 0.1 * t, "t={t} delta={d}");
    }
    assert!(dir.path().join("loss.csv").exists());
}

#[test]
fn symbol_check_has_no_violations() {
    let dir = TempDir::new().unwrap();
    let o = gslab(&["symbol-check", "--dim", "2", "--n", "64", "--L", "16", "--h", "2", "--M", "1", "--s", "1.8"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(dir.path())["results"]["violations"], 0);
    let v = std::fs::read_to_string(dir.path().join("violations.csv")).unwrap();
    assert_eq!(v.trim(), "x0,x1,xi0,xi1,value,bound");
    assert!(dir.path().join("transport.json").exists());
}

#[test]
fn conjugation_check_column_is_monotone() {
    let dir = TempDir::new().unwrap();
    let o = gslab(&["conjugation-check", "--h", "5,10,20,40", "--n", "256"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("remainder.csv")).unwrap();
    let norms: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(norms.len(), 4);
    assert!(norms.windows(2).all(|w| w[1] < w[0]));
    assert!(std::fs::read_to_string(dir.path().join("remainder.svg")).unwrap().contains("<polyline"));
}

#[test]
fn sharpness_gives_opposite_outcomes() {
    let dir = TempDir::new().unwrap();
    let o = gslab(&["sharpness", "--sigma", "0.5", "--s-below", "1.8", "--s-above", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("sharpness.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",convergent,divergent"), "{line}");
    }
    let bad = gslab(&["sharpness", "--s-above", "1.5"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn norm_sweep_plot_is_monotone_for_divergent_case() {
    let dir = TempDir::new().unwrap();
    let o = gslab(&["norm-sweep", "--example", "1", "--m2", "0", "--rho2", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert_eq!(r["results"]["classification"], "divergent");
    let svg = std::fs::read_to_string(dir.path().join("sweep.svg")).unwrap();
    let start = svg.find("points=\"").unwrap() + 8;
    let end = start + svg[start..].find('"').unwrap();
    let ys: Vec<f64> = svg[start..end].split(' ').map(|p| p.split_once(',').unwrap().1.parse().unwrap()).collect();
    assert!(ys.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn energy_constant_is_stable() {
    let dir = TempDir::new().unwrap();
    let o = gslab(&["energy", "--n", "64", "--L", "10", "--dt", "1e-2", "--T", "0.2", "--threads", "1", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["seed"], 7);
    assert!(r["results"]["c0"].as_f64().unwrap().is_finite());
    assert!(dir.path().join("energy.svg").exists());
}
