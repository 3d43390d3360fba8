use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn cablewatch(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cablewatch"))
        .env_remove("CABLEWATCH_OUT")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// Balanced dataset plus calibration under `out`.
fn calibrated(out: &Path, n: &str) -> PathBuf {
    ok(cablewatch(out, &["simulate", "--scenario", s(&scenario("balanced-pijf6quad.json")), "--instances", n]));
    let text = ok(cablewatch(out, &["calibrate"]));
    assert!(text.contains("weight"), "{text}");
    out.join("calibration.json")
}

#[test]
fn assess_exit_code_follows_health_band() {
    let tmp = TempDir::new().unwrap();
    let cal = calibrated(&tmp.path().join("base"), "60");
    for (name, expected) in [("all-healthy-pijf6quad.json", 0), ("large-fault-pijf6quad.json", 2)] {
        let out = tmp.path().join(name);
        ok(cablewatch(&out, &["simulate", "--scenario", s(&scenario(name)), "--instances", "30"]));
        let o = cablewatch(&out, &["assess", "--calibration", s(&cal)]);
        assert_eq!(code(&o), expected, "{name}: {}", String::from_utf8_lossy(&o.stdout));
        assert!(out.join("assessment.json").is_file());
    }
}

#[test]
fn missing_or_empty_dataset_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&cablewatch(tmp.path(), &["calibrate"])), 64);
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&cablewatch(tmp.path(), &["calibrate", "--dataset", s(&empty)])), 64);
    assert_eq!(code(&cablewatch(tmp.path(), &["report"])), 64);
    assert_eq!(code(&cablewatch(tmp.path(), &["simulate"])), 64);
}

#[test]
fn bad_flags_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&cablewatch(tmp.path(), &["simulate", "--bogus"])), 64);
    assert_eq!(code(&cablewatch(tmp.path(), &["--profile", "reckless", "calibrate"])), 64);
    assert_eq!(code(&cablewatch(tmp.path(), &["calibrate", "--split", "1.5"])), 64);
    assert_eq!(code(&cablewatch(tmp.path(), &["--help"])), 0);
}

#[test]
fn malformed_inputs_are_data_errors() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&cablewatch(tmp.path(), &["simulate", "--scenario", s(&bad)])), 65);
    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&cablewatch(tmp.path(), &["simulate", "--scenario", s(&missing)])), 74);
}

#[test]
fn monitor_follows_scenario_swaps() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    calibrated(&out, "40");
    let live = tmp.path().join("live.json");
    fs::copy(scenario("all-healthy-pijf6quad.json"), &live).unwrap();
    ok(cablewatch(&out, &["monitor", "--scenario", s(&live), "--iterations", "3", "--interval-ms", "5"]));
    fs::copy(scenario("large-fault-pijf6quad.json"), &live).unwrap();
    ok(cablewatch(&out, &["monitor", "--scenario", s(&live)]));

    let his: Vec<f64> = fs::read_to_string(out.join("monitor.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["hi"].as_f64().unwrap())
        .collect();
    assert_eq!(his.len(), 4);
    assert!(his[0] == his[1] && his[1] == his[2], "{his:?}");
    assert!(his[3] < his[0], "{his:?}");
    assert_eq!(code(&cablewatch(&out, &["monitor", "--scenario", s(&live), "--iterations", "0"])), 64);

    let rec = out.join("monitor.jsonl");
    ok(cablewatch(&out, &["report", "--records", s(&rec)]));
    let rows = fs::read_to_string(out.join("report/monitor_hi.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let cal = calibrated(&out, "30");
        ok(cablewatch(&out, &["report", "--dataset", s(&out.join("dataset")), "--calibration", s(&cal)]));
        let mut files = Vec::new();
        for e in fs::read_dir(out.join("report")).unwrap() {
            let p = e.unwrap().path();
            files.push((p.file_name().unwrap().to_owned(), fs::read(&p).unwrap()));
        }
        files.sort();
        (fs::read(cal).unwrap(), files)
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_cablewatch"))
        .env("CABLEWATCH_OUT", &out)
        .current_dir(tmp.path())
        .args(["simulate", "--scenario", s(&scenario("case1-pijf6quad.json")), "--instances", "5"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("dataset/manifest.json").is_file());
    assert!(!tmp.path().join("cablewatch-out").exists());

    let flag = tmp.path().join("from-flag");
    let o = Command::new(env!("CARGO_BIN_EXE_cablewatch"))
        .env("CABLEWATCH_OUT", &out)
        .args(["--out", s(&flag), "simulate", "--scenario", s(&scenario("case1-pijf6quad.json")), "--instances", "5"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag.join("dataset/manifest.json").is_file());
}

#[test]
fn example_config_drives_simulate() {
    let tmp = TempDir::new().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let o = Command::new(env!("CARGO_BIN_EXE_cablewatch"))
        .current_dir(&root)
        .args(["--config", "configs/run.json", "--out", s(tmp.path()), "simulate", "--instances", "5"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("dataset/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
}
