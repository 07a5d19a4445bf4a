use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn mechanic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mechanic"))
        .args(args)
        .env_remove("MM_LOG")
        .output()
        .unwrap()
}

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    path.to_str().unwrap().to_string()
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn learn(dir: &Path, name: &str) -> PathBuf {
    let out = dir.join(format!("{name}.engine.json"));
    let run = mechanic(&[
        "learn",
        "--project",
        &fixture(&format!("{name}.mmproj")),
        "--out",
        s(&out),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    out
}

#[test]
fn learn_then_eval_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let engine = learn(dir.path(), "sokoban");
    let report = dir.path().join("report.json");
    let run = mechanic(&[
        "eval",
        "--engine",
        s(&engine),
        "--reference",
        &fixture("sokoban.mmproj"),
        "--report",
        s(&report),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let report = read_json(&report);
    assert_eq!(report["meanError"], 0.0);
    assert_eq!(report["beatBaseline"], true);
}

#[test]
fn empty_engine_without_kinematics_scores_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let engine = dir.path().join("empty.engine.json");
    std::fs::write(
        &engine,
        r#"{"schemaVersion": 1, "rules": [], "nextRuleId": 0}"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let run = mechanic(&[
        "eval",
        "--engine",
        s(&engine),
        "--reference",
        &fixture("flappy.mmproj"),
        "--report",
        s(&report),
        "--no-kinematics",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let report = read_json(&report);
    assert_eq!(report["meanError"], report["baselineMeanError"]);
}

#[test]
fn play_follows_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let engine = learn(dir.path(), "flappy");
    let trace = dir.path().join("inputs.json");
    std::fs::write(&trace, r#"[{"space": true}, {}, {}]"#).unwrap();
    let frames = dir.path().join("frames.json");
    let run = mechanic(&[
        "play",
        "--engine",
        s(&engine),
        "--frame0",
        &fixture("flappy.mmproj"),
        "--trace",
        s(&trace),
        "--out",
        s(&frames),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let frames = read_json(&frames);
    let heights: Vec<i64> = frames
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["objects"][0]["y"].as_i64().unwrap())
        .collect();
    assert_eq!(heights, [7, 6, 5]);
}

#[test]
fn cluster_writes_one_row_per_rule() {
    let dir = tempfile::tempdir().unwrap();
    let engines = dir.path().join("engines");
    std::fs::create_dir(&engines).unwrap();
    learn(&engines, "flappy");
    learn(&engines, "sokoban");
    let csv_path = dir.path().join("clusters.csv");
    let run = mechanic(&[
        "cluster",
        "--engines",
        s(&engines),
        "--k",
        "auto",
        "--seed",
        "3",
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), 2 + 20 + 2);
    assert_eq!(&header[0], "engine");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[23].parse::<f64>().unwrap() > 0.0));

    let first = std::fs::read(&csv_path).unwrap();
    mechanic(&[
        "cluster",
        "--engines",
        s(&engines),
        "--k",
        "auto",
        "--seed",
        "3",
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(
        std::fs::read(&csv_path).unwrap(),
        first,
        "same seed, same output"
    );

    let run = mechanic(&[
        "cluster",
        "--engines",
        s(&engines),
        "--k",
        "2",
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
}

#[test]
fn export_writes_the_listing() {
    let dir = tempfile::tempdir().unwrap();
    let engine = learn(dir.path(), "flappy");
    let text = dir.path().join("rules.txt");
    let run = mechanic(&["export", "--engine", s(&engine), "--text", s(&text)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let listing = std::fs::read_to_string(&text).unwrap();
    assert_eq!(listing.matches("RULE: ").count(), 3);
}

#[test]
fn serve_over_stdio() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let mut child = Command::new(env!("CARGO_BIN_EXE_mechanic"))
        .args(["serve", "--stdio", "--project", &fixture("sokoban.mmproj")])
        .env("MM_LOG", &log)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    writeln!(stdin, r#"{{"type":"learn.run","requestId":1}}"#).unwrap();
    writeln!(
        stdin,
        r#"{{"type":"predict.get","requestId":2,"payload":{{"index":7}}}}"#
    )
    .unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ghost = lines.iter().find(|l| l["requestId"] == 2).unwrap();
    assert_eq!(ghost["ok"], true);
    assert_eq!(ghost["payload"]["frame"]["objects"][1]["x"], 7);
    assert!(std::fs::read_to_string(&log)
        .unwrap()
        .contains("learn-finished"));
}

#[test]
fn exit_codes() {
    let help = mechanic(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let usage = String::from_utf8(mechanic(&["learn", "--help"]).stdout).unwrap();
    for flag in [
        "--project",
        "--out",
        "--theta",
        "--max-iter",
        "--no-kinematics",
    ] {
        assert!(usage.contains(flag), "{flag}");
    }

    assert_eq!(mechanic(&["learn", "--bogus"]).status.code(), Some(2));
    assert_eq!(mechanic(&["serve"]).status.code(), Some(2));
    assert_eq!(
        mechanic(&["serve", "--stdio", "--socket", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(mechanic(&["frobnicate"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.mmproj");
    let run = mechanic(&[
        "learn",
        "--project",
        s(&missing),
        "--out",
        s(&dir.path().join("e.json")),
    ]);
    assert_eq!(run.status.code(), Some(1));
    let err = stderr(&run);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("nope.mmproj"), "{err}");

    let broken = dir.path().join("broken.mmproj");
    std::fs::write(&broken, "{\"schemaVersion\": 1, \"name\": 3}").unwrap();
    let run = mechanic(&[
        "learn",
        "--project",
        s(&broken),
        "--out",
        s(&dir.path().join("e.json")),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("broken.mmproj"));

    let run = mechanic(&[
        "cluster",
        "--engines",
        s(dir.path()),
        "--k",
        "many",
        "--out",
        s(&dir.path().join("c.csv")),
    ]);
    assert_eq!(run.status.code(), Some(1));
}
