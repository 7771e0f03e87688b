//! End-to-end runs of the `fastattn` binary.

use std::path::Path;
use std::process::{Command, Output};

fn fastattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastattn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn equivalence_suite_passes_on_healthy_build() {
    let o = fastattn(&["verify", "--suite", "equivalence"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS  equivalence/fast_equals_quadratic"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let o = fastattn(&["verify", "--suite", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nonsense"));
}

#[test]
fn verify_refuses_single_precision() {
    let o = fastattn(&["--dtype", "f32", "verify", "--suite", "tensor"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("double precision"));
}

#[test]
fn broken_fixture_fails_naming_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good");
    let bad = dir.path().join("bad");
    let g = good.to_str().unwrap();
    let b = bad.to_str().unwrap();
    assert_eq!(fastattn(&["verify", "--emit-fixture", g]).status.code(), Some(0));
    assert_eq!(fastattn(&["verify", "--emit-fixture", b, "--broken"]).status.code(), Some(0));

    let o = fastattn(&["verify", "--fixture", g]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let o = fastattn(&["verify", "--fixture", b]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("FAIL  fixture/golden_fast_output"), "{out}");
    assert!(out.contains("worst entry (0, 0) off by 1.000e-3"), "{out}");
}

#[test]
fn corrupt_fixture_is_an_io_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    fastattn(&["verify", "--emit-fixture", d]);
    std::fs::write(dir.path().join("value.fatn"), b"FATN\x01\x00").unwrap();
    let o = fastattn(&["verify", "--fixture", d]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("value.fatn"), "{}", stderr(&o));
}

#[test]
fn bench_csv_header_is_exact() {
    let o = fastattn(&[
        "--format", "csv", "bench", "--n", "64", "--channels", "8", "--cprime", "4", "--variants",
        "softmax,fast",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("variant,n,C,cprime,t,macs,wall_time_s,seed"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..6], ["softmax", "64", "8", "4", "1", &(64 * 64 * 12).to_string()]);
    assert_eq!(rows[1][5], (2 * 64 * 4 * 8).to_string());
    assert!(rows.iter().all(|r| r[6].parse::<f64>().unwrap() > 0.0 && r[7] == "42"));
}

#[test]
fn bench_json_carries_speedup() {
    let o = fastattn(&["--format", "json", "bench", "--n", "128", "--channels", "8", "--cprime", "4"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["repeats"], 5);
    assert_eq!(v["speedups"][0]["baseline"], "softmax");
    assert!(v["speedups"][0]["speedup"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_guards_the_affinity_budget_and_repeats() {
    let o = fastattn(&["bench", "--n", "70000", "--variants", "softmax"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("byte budget"), "{}", stderr(&o));
    let o = fastattn(&["bench", "--n", "16", "--repeats", "4"]);
    assert_eq!(o.status.code(), Some(2));
    // The fast variant alone never materializes an affinity.
    let o = fastattn(&["bench", "--n", "70000", "--channels", "2", "--cprime", "2", "--variants", "fast"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn table1_json_validates_against_shipped_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/table1.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    let o = fastattn(&["--format", "json", "flops", "--table1"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    if let Err(errors) = validator.validate(&doc) {
        let msgs: Vec<String> = errors.map(|e| e.to_string()).collect();
        panic!("schema violations: {msgs:?}");
    }
    let mut broken = doc.clone();
    broken["rows"][0]["ratio"] = serde_json::json!("small");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn stream_check_and_missing_frame() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let gen = fastattn(&["stream", "--generate", d, "--n", "64", "--cprime", "8", "--channels", "16", "--t", "2"]);
    assert_eq!(gen.status.code(), Some(0));
    let manifest = dir.path().join("manifest.json");
    let m = manifest.to_str().unwrap();

    let o = fastattn(&["stream", "--manifest", m, "--check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS max deviation"));

    let core_macs = |t: &str| -> Vec<String> {
        let o = fastattn(&["--format", "csv", "stream", "--manifest", m, "--window", t]);
        stdout(&o).lines().skip(1).map(|l| l.split(',').nth(2).unwrap().to_string()).collect()
    };
    let one = core_macs("1");
    assert!(one.iter().all(|c| c == &(2 * 64 * 8 * 16).to_string()));
    for t in ["2", "4", "8"] {
        assert_eq!(core_macs(t), one);
    }

    std::fs::remove_file(dir.path().join("frame_0005.key")).unwrap();
    let o = fastattn(&["stream", "--manifest", m]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("frame_0005.key"), "{}", stderr(&o));
}

#[test]
fn placement_lists_six_rows_earliest_first() {
    let o = fastattn(&["--format", "csv", "placement", "--repeats", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let names: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["Conv0", "Res1", "Res2", "Res3", "Res4", "None"]);
    let flops: Vec<u64> = out.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(flops.windows(2).all(|p| p[0] < p[1]));
}

#[test]
fn out_flag_writes_report_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t1.csv");
    let o = fastattn(&["--format", "csv", "--out", path.to_str().unwrap(), "flops"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 7);

    let o = fastattn(&["--out", "/nonexistent-dir/x.txt", "flops"]);
    assert_eq!(o.status.code(), Some(3));
}
