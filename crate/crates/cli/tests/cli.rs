use std::path::Path;
use std::process::{Command, Output};

use geoflow_cli::{run_config, ExperimentConfig};

fn geoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoflow")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const GREAT_CIRCLE: &str = r#"{
  "schema_version": 1,
  "seed": 1,
  "surface": { "kind": "round_sphere", "radius": 1.0 },
  "experiment": { "kind": "index", "geodesic": { "type": "parallel", "r": 1.5707963267948966 }, "expect_index": 1 }
}"#;

fn stderr_kind(o: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn unknown_key_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.json", &GREAT_CIRCLE.replace("\"seed\": 1,", "\"seed\": 1, \"sede\": 2,"));
    let o = geoflow(&["index", "--config", &cfg, "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_kind(&o), "usage");
}

#[test]
fn wrong_subcommand_and_schema_version_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let cfg = write(d.path(), "c.json", GREAT_CIRCLE);
    assert_eq!(geoflow(&["scan", "--config", &cfg, "--out", out]).status.code(), Some(2));
    let v2 = write(d.path(), "v2.json", &GREAT_CIRCLE.replace("\"schema_version\": 1", "\"schema_version\": 2"));
    assert_eq!(geoflow(&["index", "--config", &v2, "--out", out]).status.code(), Some(2));
    assert_eq!(geoflow(&["index", "--out", out]).status.code(), Some(2));
}

#[test]
fn pass_and_scientific_failure_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let ok = write(d.path(), "ok.json", GREAT_CIRCLE);
    let o = geoflow(&["index", "--config", &ok, "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let bad = write(d.path(), "bad.json", &GREAT_CIRCLE.replace("\"expect_index\": 1", "\"expect_index\": 0"));
    assert_eq!(geoflow(&["index", "--config", &bad, "--out", out]).status.code(), Some(1));
}

#[test]
fn output_layout_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(GREAT_CIRCLE).unwrap();
    let rec = run_config(&cfg, d.path()).unwrap();
    assert_eq!(rec.dir, d.path().join("index").join(cfg.hash()));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(rec.dir.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
    assert!(files.contains(&"report.json") && files.contains(&"geodesic.csv"));
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = std::fs::read(rec.dir.join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&rec.report).unwrap()).unwrap();
    assert_eq!(report["config"], serde_json::to_value(&cfg).unwrap());
}

#[test]
fn csv_format_adds_summary() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.json", GREAT_CIRCLE);
    let o = geoflow(&["index", "--config", &cfg, "--out", d.path().to_str().unwrap(), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let line: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(Path::new(line["dir"].as_str().unwrap()).join("summary.csv").exists());
}

#[test]
fn reports_are_byte_identical_across_runs_and_threads() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.json", GREAT_CIRCLE);
    let mut reports = Vec::new();
    for (i, t) in ["1", "3"].iter().enumerate() {
        let out = d.path().join(format!("run{i}"));
        let o = geoflow(&["index", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", t]);
        assert_eq!(o.status.code(), Some(0));
        let line: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        reports.push(std::fs::read(Path::new(line["dir"].as_str().unwrap()).join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn constant_factor_scales_length_exactly() {
    let c: f64 = 0.005;
    let text = format!(
        r#"{{"schema_version": 1, "seed": 2,
           "surface": {{ "kind": "torus_of_revolution", "major": 2.0, "minor": 1.0 }},
           "experiment": {{ "kind": "stability", "geodesic": {{ "type": "parallel", "r": 3.141592653589793 }},
                           "perturbation": {{ "type": "constant", "value": {c} }}, "epsilon": 0.05 }} }}"#
    );
    let cfg = ExperimentConfig::from_json(&text).unwrap();
    let d = tempfile::tempdir().unwrap();
    let rec = run_config(&cfg, d.path()).unwrap();
    assert!(rec.passed, "{}", rec.verdict);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&rec.report).unwrap()).unwrap();
    let lg = r["result"]["g"]["length"].as_f64().unwrap();
    let lh = r["result"]["h"]["length"].as_f64().unwrap();
    // inner equator of this torus has length 2 pi (R - a)
    assert!((lg - std::f64::consts::TAU).abs() < 1e-9);
    assert!((lh - c.exp() * lg).abs() < 1e-8 * lg, "{lh} vs {}", c.exp() * lg);
}

#[test]
fn degenerate_base_geodesic_is_refused() {
    let text = r#"{"schema_version": 1, "seed": 2,
        "surface": { "kind": "round_sphere", "radius": 1.0 },
        "experiment": { "kind": "stability", "geodesic": { "type": "parallel", "r": 1.5707963267948966 },
                        "perturbation": { "type": "bump", "center": [1.0, 0.0], "radius": 0.3, "amplitude": 0.01 }, "epsilon": 0.05 } }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    let d = tempfile::tempdir().unwrap();
    let err = run_config(&cfg, d.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn equator_copy_is_rejected_before_flowing() {
    let text = r#"{"schema_version": 1, "seed": 4,
        "surface": { "kind": "model_sphere", "cap": { "r0": 2.0 }, "cylinder_length": 1.0 },
        "experiment": { "kind": "theorem_c", "families": [],
                        "extra_seeds": [ { "type": "parallel", "r": 2.0, "spacing": 0.05 } ] } }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    let d = tempfile::tempdir().unwrap();
    let rec = run_config(&cfg, d.path()).unwrap();
    assert!(!rec.passed);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&rec.report).unwrap()).unwrap();
    let seeds = r["result"]["spectrum"]["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 1);
    assert_eq!(seeds[0]["fate"], "rejected_by_signature");
    assert_eq!(seeds[0]["steps"], 0);
}
