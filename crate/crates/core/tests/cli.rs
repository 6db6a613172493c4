//! Behavior of the command line driver: exit codes, output formats, file
//! output, and agreement between the shipped model files and the built-in
//! fixtures.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output};

use mgw::fixtures;
use mgw::model::Model;

fn model_path(name: &str) -> String {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.push("../../models");
    p.push(name);
    p.to_str().expect("utf-8 path").to_owned()
}

fn mgw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgw"))
        .args(args)
        .output()
        .expect("spawn the mgw binary")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

#[test]
fn model_files_match_fixtures() {
    let cases: [(&str, Model); 6] = [
        ("e0.json", fixtures::binary()),
        ("e1.json", fixtures::leafy()),
        ("e2.json", fixtures::two_type()),
        ("e3.json", fixtures::weighted_pair()),
        ("e4.json", fixtures::two_type_leafy()),
        ("e5.json", fixtures::weighted_mixed()),
    ];
    for (file, fixture) in cases {
        let loaded = Model::load(std::path::Path::new(&model_path(file))).unwrap();
        assert_eq!(
            loaded.to_json(),
            fixture.to_json(),
            "{file} drifted from the built-in fixture"
        );
    }
}

#[test]
fn spectral_reports_the_known_radii() {
    for (file, rho) in [("e0.json", 2.0), ("e2.json", 2.0), ("e3.json", 2.5)] {
        let out = mgw(&["spectral", "--model", &model_path(file)]);
        assert_eq!(out.status.code(), Some(0), "{file}");
        let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
        let got = report["rho"].as_f64().unwrap();
        assert!((got - rho).abs() < 1e-9, "{file}: rho {got}");
    }
}

#[test]
fn missing_model_is_a_usage_error() {
    let out = mgw(&["spectral"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn unreadable_model_is_a_usage_error() {
    let out = mgw(&["spectral", "--model", "/nonexistent/nope.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn malformed_model_is_a_usage_error() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(
        file,
        r#"{{"types":["a"],"offspring":{{"a":[{{"p":0.5,"children":[]}}]}}}}"#
    )
    .unwrap();
    let out = mgw(&["spectral", "--model", file.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "probabilities sum to 1/2");
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = mgw(&["clt", "--model", &model_path("e0.json"), "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn continuous_time_rayed_clt_is_rejected() {
    let out = mgw(&[
        "clt",
        "--model",
        &model_path("e0.json"),
        "--mode",
        "cts",
        "--walk",
        "rayed",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_root_type_is_rejected() {
    let out = mgw(&[
        "sample",
        "--model",
        &model_path("e2.json"),
        "--root",
        "fixed:7",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let couple = mgw(&["couple", "--model", &model_path("e2.json"), "--a0", "9"]);
    assert_eq!(couple.status.code(), Some(2));
}

#[test]
fn survey_validates_its_shape() {
    let short = mgw(&[
        "conductance",
        "--model",
        &model_path("e1.json"),
        "--survey",
        "--ks",
        "4,8",
        "--replicas",
        "10",
    ]);
    assert_eq!(short.status.code(), Some(2), "two depths are not a trend");
    let lone = mgw(&[
        "conductance",
        "--model",
        &model_path("e1.json"),
        "--survey",
    ]);
    assert_eq!(lone.status.code(), Some(2), "one tree is not a survey");
}

#[test]
fn sample_csv_has_header_and_replica_blocks() {
    let out = mgw(&[
        "sample",
        "--model",
        &model_path("e2.json"),
        "--measure",
        "mgw",
        "--depth",
        "2",
        "--replicas",
        "3",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("replica,id,parent,type,w,level,marked"));
    let mut replicas_seen = [false; 3];
    for line in lines {
        let replica: usize = line.split(',').next().unwrap().parse().unwrap();
        replicas_seen[replica] = true;
    }
    assert_eq!(replicas_seen, [true; 3]);
}

#[test]
fn sample_json_is_one_object_per_line() {
    let out = mgw(&[
        "sample",
        "--model",
        &model_path("e2.json"),
        "--measure",
        "imgw0",
        "--ray-depth",
        "4",
        "--depth",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    for line in stdout_str(&out).lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["id"].is_u64());
        assert!(row["level"].is_i64());
    }
}

#[test]
fn walk_csv_rows_advance_time() {
    let out = mgw(&[
        "walk",
        "--model",
        &model_path("e0.json"),
        "--kind",
        "rooted",
        "--steps",
        "64",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 65, "initial position plus one row per step");
    for (t, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1].parse::<usize>().unwrap(), t);
    }
}

#[test]
fn continuous_walk_reports_jump_times_up_to_the_horizon() {
    let out = mgw(&[
        "walk",
        "--model",
        &model_path("e0.json"),
        "--kind",
        "rooted-cts",
        "--time",
        "5.0",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("replica,t,vertex,height,jump_time"));
    let mut last = -1.0;
    for row in lines {
        let s: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!(s >= last && s <= 5.0, "jump times sorted and capped");
        last = s;
    }
}

#[test]
fn clt_csv_matches_replica_count() {
    let out = mgw(&[
        "clt",
        "--model",
        &model_path("e0.json"),
        "--mode",
        "annealed",
        "--n",
        "400",
        "--replicas",
        "50",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_str(&out);
    assert_eq!(text.lines().next(), Some("path,quarter,half,full"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn out_flag_writes_the_same_bytes_as_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let args = [
        "reverse-check",
        "--model",
        &model_path("e2.json"),
        "--samples",
        "2000",
        "--steps",
        "20000",
        "--seed",
        "6",
    ];
    let to_stdout = mgw(&args);
    assert_eq!(to_stdout.status.code(), Some(0), "this seed passes");
    let mut with_out = args.to_vec();
    let path_str = path.to_str().unwrap().to_owned();
    with_out.extend_from_slice(&["--out", &path_str]);
    let redirected = mgw(&with_out);
    assert_eq!(redirected.status.code(), Some(0));
    assert!(redirected.stdout.is_empty());
    assert_eq!(std::fs::read(&path).unwrap(), to_stdout.stdout);
}

#[test]
fn rwre_defaults_to_the_critical_bias() {
    let out = mgw(&["rwre", "--model", &model_path("e3.json")]);
    assert_eq!(out.status.code(), Some(0));
    let entries: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let lambda = entries[0]["classifier"]["lambda"].as_f64().unwrap();
    assert!((lambda - 2.5).abs() < 1e-9, "weighted pair radius is 2.5");
    assert_eq!(
        entries[0]["classifier"]["verdict"].as_str(),
        Some("critical-indeterminate")
    );
    assert!(entries[0]["simulation"].is_null(), "not requested");
}
