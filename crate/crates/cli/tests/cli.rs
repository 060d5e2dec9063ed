use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn driftlens(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlens"))
        .args(args)
        .current_dir(dir)
        .env_remove("DRIFTLENS_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const UTIL_OLD: &str = "public class Util {\n    int add(int a, int b) {\n        return a + b;\n    }\n\n    int twice(int a) {\n        return add(a, a);\n    }\n}\n";
const UTIL_NEW: &str = "public class Util {\n    int add(int a, int b) {\n        return a - b;\n    }\n\n    int twice(int a) {\n        return add(a, a);\n    }\n}\n";

fn corpus(dir: &Path) {
    let row = |path: &str, bug: u8, src: &str| format!("{path},{bug},\"{}\"\n", src.replace('"', "\"\""));
    let mut old = String::from("name,bug,src\n");
    old += &row("org/a/Util.java", 0, UTIL_OLD);
    old += &row("org/a/Same.java", 1, "class Same {}\n");
    old += &row("org/a/Gone.java", 0, "class Gone { int x; }\n");
    let mut new = String::from("name,bug,src\n");
    new += &row("org/a/Util.java", 1, UTIL_NEW);
    new += &row("org/a/Same.java", 1, "class Same {}\n");
    new += &row("org/b/Fresh.java", 0, "class Fresh { void f() {} }\n");
    fs::write(dir.join("old.csv"), old).unwrap();
    fs::write(dir.join("new.csv"), new).unwrap();
}

#[test]
fn partition_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = driftlens(&["partition", "--old", "old.csv", "--new", "new.csv", "--out", "records.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("B00"), "{out}");
    let records = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert!(records.starts_with("record_id,"));
    assert_eq!(records.lines().count(), 4);
}

#[test]
fn baseline_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let d = dir.path();
    assert!(driftlens(&["partition", "--old", "old.csv", "--new", "new.csv", "--out", "records.csv"], d).status.success());
    let o = driftlens(&["baseline", "--old", "old.csv", "--new", "new.csv", "--out", "preds.csv"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = fs::read_to_string(d.join("preds.csv")).unwrap();
    assert!(preds.contains("org/a/Util.java,Benign"), "{preds}");

    let o = driftlens(&["evaluate", "--preds", "preds.csv", "--records", "records.csv", "--csv", "report.csv"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("HMB"));
    let report = fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn predict_with_stub_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = driftlens(
        &["predict", "--old", "old.csv", "--new", "new.csv", "--method", "M5", "--stub", "--out-dir", "run"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["manifest.txt", "matches.csv", "records.csv", "predictions.csv", "report.txt", "report.csv"] {
        assert!(dir.path().join("run").join(f).exists(), "missing {f}");
    }
    let manifest = fs::read_to_string(dir.path().join("run/manifest.txt")).unwrap();
    assert!(!manifest.to_lowercase().contains("api_key"));
}

#[test]
fn debate_with_stub_writes_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = driftlens(&["debate", "--old", "old.csv", "--new", "new.csv", "--stub", "--out-dir", "run", "--rounds", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let n = fs::read_dir(dir.path().join("run/transcripts")).unwrap().count();
    assert_eq!(n, 1);
}

#[test]
fn conflicting_selectors_fail() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = driftlens(
        &["run", "--old", "old.csv", "--new", "new.csv", "--set", "method=M5", "--set", "debate=true", "--stub"],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config"), "{}", stderr(&o));
}

#[test]
fn config_file_rejects_api_key() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    fs::write(dir.path().join("run.cfg"), "method = M5\napi_key = secret\n").unwrap();
    let o = driftlens(&["run", "--config", "run.cfg", "--old", "old.csv", "--new", "new.csv", "--stub"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("api_key"), "{}", stderr(&o));
}

#[test]
fn diff_and_context_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.java"), UTIL_OLD).unwrap();
    fs::write(d.join("b.java"), UTIL_NEW).unwrap();
    let o = driftlens(&["diff", "a.java", "b.java"], d);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("-        return a + b;") && out.contains("+        return a - b;"), "{out}");

    let o = driftlens(&["context", "a.java", "b.java", "--depth", "1"], d);
    assert!(o.status.success());
    assert!(stdout(&o).contains("int twice(int a)"));
    assert!(stderr(&o).contains("add, twice"), "{}", stderr(&o));
}
