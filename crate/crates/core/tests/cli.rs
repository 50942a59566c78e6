use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aftsdar"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn aftsdar")
}

fn validator() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn assert_valid(report: &Value) {
    let v = validator();
    let errors: Vec<String> = v.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

fn report_from_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn golden_noiseless_fit() {
    let input = data("golden_noiseless.csv");
    let out = run(&["fit", "-i", input.to_str().unwrap(), "-t", "3", "--eta"]);
    let report = report_from_stdout(&out);
    assert_valid(&report);
    let golden: Value =
        serde_json::from_str(&std::fs::read_to_string(data("golden_fit.json")).unwrap()).unwrap();
    let res = &report["results"];
    assert_eq!(res["active_set"], golden["active_set"]);
    assert_eq!(res["termination"], "ActiveSetRepeat");
    let got = res["coefficients"].as_array().unwrap();
    let want = golden["coefficients"].as_array().unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert_eq!(g["name"], w["name"]);
        assert_eq!(g["index"], w["index"]);
        let diff = (g["beta"].as_f64().unwrap() - w["beta"].as_f64().unwrap()).abs();
        assert!(diff < 1e-9, "{g} vs {w}");
        assert!(g["eta"].is_number());
    }
    assert!(report["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn fit_diagnostics_feasible_and_infeasible() {
    let input = data("golden_noiseless.csv");
    let out = run(&["fit", "-i", input.to_str().unwrap(), "-t", "3", "--diagnostics"]);
    let report = report_from_stdout(&out);
    assert_valid(&report);
    assert_eq!(report["diagnostics"]["subsets_enumerated"], 924);
    assert_eq!(report["diagnostics"]["identifiable"], true);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("wide.csv");
    let sim = run(&["simulate", "-o", csv.to_str().unwrap(), "--n", "60", "--p", "300", "--k", "5", "--seed", "1"]);
    assert!(sim.status.success());
    let out = run(&["fit", "-i", csv.to_str().unwrap(), "-t", "5", "--diagnostics"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_then_fit_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sim.csv");
    let out = run(&[
        "simulate", "-o", csv.to_str().unwrap(), "--n", "80", "--p", "120", "--k", "4",
        "--sigma", "0", "--censor-rate", "0", "--coef", "ratio", "--ratio", "5", "--seed", "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let side: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sim.json")).unwrap()).unwrap();
    assert_valid(&side);
    let beta_star: Vec<f64> = serde_json::from_value(side["results"]["beta_star"].clone()).unwrap();
    assert_eq!(side["results"]["realized_censor_rate"], 0.0);
    assert!(side["results"]["eta_c"].is_null());

    let fit = report_from_stdout(&run(&["fit", "-i", csv.to_str().unwrap(), "-t", "4"]));
    assert_eq!(fit["results"]["active_set"], side["results"]["true_support"]);
    for c in fit["results"]["coefficients"].as_array().unwrap() {
        let j = c["index"].as_u64().unwrap() as usize;
        assert!((c["beta"].as_f64().unwrap() - beta_star[j]).abs() < 1e-8);
    }
}

#[test]
fn tune_reports_validate() {
    let input = data("golden_noiseless.csv");
    for extra in [&["--criterion", "hbic"][..], &["--criterion", "cv", "--folds", "3"], &["--criterion", "change", "--epsilon", "1e-8"]] {
        let mut args = vec!["tune", "-i", input.to_str().unwrap(), "--max-support", "6"];
        args.extend_from_slice(extra);
        let report = report_from_stdout(&run(&args));
        assert_valid(&report);
        assert!(!report["results"]["path"].as_array().unwrap().is_empty());
    }
    let out = run(&["tune", "-i", input.to_str().unwrap(), "--criterion", "residual"]);
    assert_eq!(out.status.code(), Some(1), "residual rule without epsilon is a usage error");
}

#[test]
fn bench_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("bench.json");
    let csv = dir.path().join("bench.csv");
    let out = run(&[
        "bench", "-o", json.to_str().unwrap(), "--csv", csv.to_str().unwrap(), "--n", "60", "--p", "100",
        "--k", "3", "--replications", "3", "--method", "sdar", "--method", "asdar", "--max-support", "6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_valid(&report);
    assert!(report["results"]["rows"][0].get("seconds").is_none());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 2);
    assert!(text.lines().next().unwrap().contains("seconds"));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("conf.json");
    std::fs::write(&conf, r#"{"support_size": 3, "tau": 0.5}"#).unwrap();
    let input = data("golden_noiseless.csv");
    let report = report_from_stdout(&run(&[
        "--config", conf.to_str().unwrap(), "fit", "-i", input.to_str().unwrap(), "--tau", "0.75",
    ]));
    assert_eq!(report["config"]["solver"]["support_size"], 3);
    assert_eq!(report["config"]["solver"]["tau"], 0.75);
}

#[test]
fn exit_codes() {
    let out = run(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time,status,x\n1,1,2\n2,7,3\n").unwrap();
    let out = run(&["fit", "-i", bad.to_str().unwrap(), "-t", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));

    let censored = dir.path().join("censored.csv");
    std::fs::write(&censored, "time,status,x\n1,0,2\n2,0,3\n3,0,1\n").unwrap();
    let out = run(&["fit", "-i", censored.to_str().unwrap(), "-t", "1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let args = [
        "bench", "-o", json.to_str().unwrap(), "--n", "50", "--p", "80", "--k", "3",
        "--replications", "4", "--method", "asdar", "--criterion", "cv", "--folds", "3", "--max-support", "5", "--seed", "7",
    ];
    assert!(run(&args).status.success());
    let first = std::fs::read(&json).unwrap();
    assert!(run(&args).status.success());
    assert_eq!(first, std::fs::read(&json).unwrap());
}
