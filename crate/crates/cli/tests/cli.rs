use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ltvdetect(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltvdetect"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("LTVDETECT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(report: &Value) {
    let v = validator();
    let errors: Vec<String> = v.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn analyze_bundled_saddle_is_detectable() {
    let tmp = tempfile::tempdir().unwrap();
    let examples = tmp.path().join("examples");
    let out = ltvdetect(&tmp.path().join("out"), &["--examples", examples.to_str().unwrap()]);
    assert!(out.status.success());
    let file = examples.join("saddle_observed.toml");
    let out = ltvdetect(&tmp.path().join("out"), &["analyze", "--system", file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout["verdict"], "detectable");
    let report = read_report(&tmp.path().join("out"));
    assert_eq!(report["result"]["verdict"], "detectable");
    assert_eq!(report["command"], "analyze");
    for f in report["files"].as_array().unwrap() {
        assert!(tmp.path().join("out").join(f.as_str().unwrap()).exists());
    }
    assert_valid(&report);
}

#[test]
fn not_detectable_still_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltvdetect(tmp.path(), &["analyze", "--example", "saddle_hidden"]);
    assert!(out.status.success());
    assert_eq!(read_report(tmp.path())["result"]["verdict"], "not-detectable");
}

#[test]
fn missing_file_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltvdetect(tmp.path(), &["analyze", "--system", "/definitely/not/here.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("system file") && err.contains("here.toml"), "{err}");
}

#[test]
fn malformed_file_reports_line_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[A]\nkind = \"constant\"\nvalues = [[1.0, 2.0], [3.0]]\n[C]\nkind = \"constant\"\nvalues = [[1.0, 0.0]]\n",
    )
    .unwrap();
    let out = ltvdetect(tmp.path(), &["qr", "--system", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("A.values"));

    std::fs::write(&bad, "[A]\nkind = \"constant\"\nvalues = [[1.0]\n").unwrap();
    let out = ltvdetect(tmp.path(), &["qr", "--system", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    std::fs::write(
        &bad,
        "n = 3\n[A]\nkind = \"constant\"\nvalues = [[1.0]]\n[C]\nkind = \"constant\"\nvalues = [[1.0]]\n",
    )
    .unwrap();
    let out = ltvdetect(tmp.path(), &["qr", "--system", bad.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn gramian_of_blind_output_fails_every_window() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltvdetect(tmp.path(), &["gramian", "--example", "blind", "--sigma", "1,2,4"]);
    assert!(out.status.success());
    let report = read_report(tmp.path());
    let windows = report["result"]["windows"].as_array().unwrap();
    assert_eq!(windows.len(), 3);
    assert!(windows.iter().all(|w| w["uco"] == false));
    assert_valid(&report);
}

#[test]
fn every_subcommand_writes_a_valid_report() {
    let cases: [&[&str]; 6] = [
        &["qr", "--example", "rotation", "--horizon", "20"],
        &["dichotomy", "--example", "saddle_observed", "--k", "1"],
        &[
            "gramian",
            "--example",
            "rotating_output",
            "--sigma",
            "2",
            "--injection-trials",
            "2",
            "--horizon",
            "20",
        ],
        &["reduce", "--example", "coupled_triangular"],
        &["observe", "--example", "scalar_unstable"],
        &["analyze", "--example", "coupled_triangular", "--route", "diagonal"],
    ];
    for args in cases {
        let tmp = tempfile::tempdir().unwrap();
        let out = ltvdetect(tmp.path(), args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let report = read_report(tmp.path());
        assert_eq!(report["command"], args[0]);
        assert!(!report["files"].as_array().unwrap().is_empty(), "{args:?}");
        assert_valid(&report);
    }
}

#[test]
fn csv_sidecars_have_headers() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(ltvdetect(tmp.path(), &["qr", "--example", "saddle_observed", "--horizon", "5"])
        .status
        .success());
    let text = std::fs::read_to_string(tmp.path().join("qr.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,nu_1,nu_2,b_11,b_22,ortho_residual"));
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 5.0);
    assert!((last[1] - 5.0).abs() < 1e-9 && (last[2] + 5.0).abs() < 1e-9);
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ltvdetect"))
        .args(["qr", "--example", "stable_pair", "--horizon", "2"])
        .env("LTVDETECT_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("report.json").exists());
}

#[test]
fn seed_is_recorded_and_drives_injections() {
    let run = |seed: &str| {
        let tmp = tempfile::tempdir().unwrap();
        let args = [
            "--seed",
            seed,
            "gramian",
            "--example",
            "rotating_output",
            "--sigma",
            "2",
            "--injection-trials",
            "2",
            "--horizon",
            "10",
        ];
        assert!(ltvdetect(tmp.path(), &args).status.success());
        let report = read_report(tmp.path());
        (
            report["seed"].clone(),
            std::fs::read_to_string(tmp.path().join("injection.csv")).unwrap(),
        )
    };
    let (seed_a, csv_a) = run("11");
    let (_, csv_b) = run("11");
    let (_, csv_c) = run("12");
    assert_eq!(seed_a, 11);
    assert_eq!(csv_a, csv_b);
    assert_ne!(csv_a, csv_c);
}
