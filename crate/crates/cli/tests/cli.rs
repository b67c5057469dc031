use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use limitop::parse_expression;
use limitop_cli::{exit, parse_config, run};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn analyze(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limitop"))
        .arg("analyze")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn norms_on_tridiagonal_are_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = analyze(&configs_dir().join("tridiagonal_norms.json"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(exit::OK), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    let norms = &r["analyses"]["norms"]["result"];
    assert_eq!(norms["op_norm_p1"]["value"], 4.0);
    assert_eq!(norms["op_norm_pinf"]["value"], 4.0);
    assert_eq!(norms["op_norm_p1"]["tag"], "exact");
    assert_eq!(r["invariant_violations"], Value::Array(vec![]));
}

#[test]
fn fredholm_run_on_bump_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = analyze(&configs_dir().join("fredholm_bump.json"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(exit::OK), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    let f = &r["analyses"]["fredholm"]["result"];
    assert_eq!(f["verdict"], "consistent-with-fredholm");
    assert_eq!(r["seed"], 7);
    assert!(tmp.path().join("finite_sections.csv").exists());
    assert!(tmp.path().join("fredholm_right_defect.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("all_analyses.json");
    let first = analyze(&cfg, a.path(), &["--seed", "11", "--threads", "2"]);
    let second = analyze(&cfg, b.path(), &["--seed", "11"]);
    assert_eq!(first.status.code(), Some(exit::OK), "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(second.status.code(), Some(exit::OK));
    let (ca, cb) = (dir_contents(a.path()), dir_contents(b.path()));
    assert!(ca.len() > 5);
    assert_eq!(ca, cb);
    assert_eq!(report(a.path())["seed"], 11);
}

#[test]
fn config_errors_exit_with_two_and_name_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"space": {"kind": "grid", "dim": 1, "lo": [-5], "hi": [5]},
            "operator": {"terms": [{"offset": [0], "coefficient": "1"}]},
            "analyses": ["fredholm"], "unexpected": 1}"#,
    )
    .unwrap();
    let out = analyze(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("directions"), "{stderr}");
    assert!(stderr.contains("unexpected"), "{stderr}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn evaluation_errors_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("div0.json");
    fs::write(
        &cfg,
        r#"{"space": {"kind": "grid", "dim": 1, "lo": [-3], "hi": [3]},
            "operator": {"terms": [{"offset": [0], "coefficient": "1/x0"}]},
            "analyses": ["norms"]}"#,
    )
    .unwrap();
    let out = analyze(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[0]"));
}

#[test]
fn table_spaces_run_norms_and_decomposition() {
    let text = r#"{
        "space": {"kind": "table", "labels": ["a", "b", "c"],
                  "distances": [["0", "1", "3/2"], ["1", "0", "1/2"], ["3/2", "1/2", "0"]]},
        "operator": {"coo": "ops.csv"},
        "analyses": ["norms", "decompose"]
    }"#;
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("ops.csv"), "row,col,value\na,b,2\nb,c,-1\nc,c,0.5\n").unwrap();
    let cfg = parse_config(text, tmp.path()).unwrap();
    let out = run(&cfg).unwrap();
    assert!(out.violations.is_empty(), "{:?}", out.violations);
    let norms = &out.report["analyses"]["norms"]["result"];
    assert_eq!(norms["op_norm_pinf"]["value"], 2.0);
    assert_eq!(norms["op_norm_p1"]["value"], 2.0);
    assert_eq!(out.report["analyses"]["decompose"]["result"]["term_bound_kind"], "2 geometry_profile(prop(A)) - 1");
}

#[test]
fn failed_analyses_do_not_stop_the_run() {
    // the window is too narrow for the smoothing partition; norms still run
    let text = r#"{
        "space": {"kind": "grid", "dim": 1, "lo": [-3], "hi": [3]},
        "operator": {"terms": [{"offset": [0], "coefficient": "2"}, {"offset": [1], "coefficient": "1"}]},
        "analyses": ["smoothing", "norms"],
        "smoothing": {"n": [1, 2], "partition_eps": 0.01}
    }"#;
    let out = run(&parse_config(text, Path::new(".")).unwrap()).unwrap();
    assert_eq!(out.report["analyses"]["smoothing"]["status"], "error");
    assert_eq!(out.report["analyses"]["norms"]["status"], "ok");
}

#[test]
fn bump_coefficient_tree_size() {
    // Add(2, Div(1, Add(1, Pow(x0, 2)))): the integer exponent lives in the Pow node
    let e = parse_expression("2 + 1/(1+x0^2)", 1).unwrap();
    assert_eq!(e.node_count(), 8);
}
