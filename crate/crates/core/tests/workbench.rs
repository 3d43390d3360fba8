use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use cablewatch_core::dataset::{load_batch, read_manifest, simulate_dataset};
use cablewatch_core::fusion::Priors;
use cablewatch_core::scenario::CableScenario;
use cablewatch_core::state::CableState;
use cablewatch_core::workbench::{
    assess, baseline_reflectograms, calibrate, hi_trace, monitor_once, plateaus, read_records, split_instants,
    write_report, CalibrationArtifact, HealthBand, RunConfig,
};
use cablewatch_core::Error;
use tempfile::TempDir;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn scenario(name: &str) -> CableScenario {
    CableScenario::from_json(&fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

fn run(instances: usize) -> RunConfig {
    RunConfig {
        instances: [instances; 3],
        ..RunConfig::default()
    }
}

struct Fixture {
    _tmp: TempDir,
    dataset: PathBuf,
    artifact: CalibrationArtifact,
}

// One balanced N=100 dataset and its calibration, shared by the tests below.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let dataset = tmp.path().join("balanced");
        let r = run(100);
        simulate_dataset(&scenario("balanced-pijf6quad.json"), r.instances, r.seed, &dataset).unwrap();
        let artifact = calibrate(&dataset, &r).unwrap();
        Fixture {
            _tmp: tmp,
            dataset,
            artifact,
        }
    })
}

fn simulated(name: &str, n: usize, seed: u64, dir: &Path) -> PathBuf {
    let out = dir.join(name);
    simulate_dataset(&scenario(name), [n; 3], seed, &out).unwrap();
    out
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(tree(&p));
        } else {
            out.insert(p.strip_prefix(dir).unwrap_or(&p).to_path_buf(), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn case1_manifest_follows_the_mix() {
    let tmp = TempDir::new().unwrap();
    let dir = simulated("case1-pijf6quad.json", 100, 3, tmp.path());
    let m = read_manifest(&dir).unwrap();
    assert_eq!(m.instants.len(), 100);
    assert_eq!(m.scenario.mix, Priors::CASE1);
    let [h, s, l] = m.state_counts();
    assert_eq!(h + s + l, 100);
    assert!((80..=97).contains(&h), "{h} healthy");
    assert!(s <= 16 && l <= 8, "{s} small, {l} large");
}

#[test]
fn small_run_is_quick_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let t = Instant::now();
    let a = simulated("balanced-pijf6quad.json", 5, 11, &tmp.path().join("a"));
    assert!(t.elapsed().as_secs_f64() < 10.0, "{:?}", t.elapsed());
    let b = simulated("balanced-pijf6quad.json", 5, 11, &tmp.path().join("b"));
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let c = simulated("balanced-pijf6quad.json", 5, 12, &tmp.path().join("c"));
    assert_ne!(ta, tree(&c));
}

#[test]
fn calibration_is_reproducible() {
    let f = fixture();
    let again = calibrate(&f.dataset, &run(100)).unwrap();
    assert_eq!(again.to_json().unwrap(), f.artifact.to_json().unwrap());
    let back = CalibrationArtifact::from_json(&f.artifact.to_json().unwrap()).unwrap();
    assert_eq!(back, f.artifact);
}

#[test]
fn missing_state_is_a_calibration_error() {
    let tmp = TempDir::new().unwrap();
    let dir = simulated("all-healthy-pijf6quad.json", 10, 0, tmp.path());
    let err = calibrate(&dir, &run(10)).unwrap_err();
    assert!(matches!(err, Error::Calibration(_)), "{err}");
}

#[test]
fn split_is_stratified_and_disjoint() {
    let f = fixture();
    let m = read_manifest(&f.dataset).unwrap();
    let (cal, held) = (&f.artifact.calibration_ids, &f.artifact.assessment_ids);
    assert!(cal.iter().all(|id| !held.contains(id)));
    assert_eq!(cal.len() + held.len(), m.instants.len());
    let counts = m.state_counts();
    for s in CableState::ALL {
        let in_cal = m.instants.iter().filter(|e| e.state == s && cal.contains(&e.id)).count();
        let expected = 0.6 * counts[s.index()] as f64;
        assert!((in_cal as f64 - expected).abs() <= 1.0, "{s}: {in_cal} of {}", counts[s.index()]);
    }
    assert_eq!(split_instants(&m, 0.6, 0).unwrap(), (cal.clone(), held.clone()));
    assert!(split_instants(&m, 1.0, 0).is_err());
}

#[test]
fn held_out_assessment_uses_only_unseen_instants() {
    let f = fixture();
    let rep = assess(&f.dataset, &f.artifact).unwrap();
    assert_eq!(rep.partition, "held-out");
    assert_eq!(rep.instants, f.artifact.assessment_ids.len());
}

#[test]
fn all_healthy_line_scores_healthy() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let dir = simulated("all-healthy-pijf6quad.json", 60, 5, tmp.path());
    let rep = assess(&dir, &f.artifact).unwrap();
    assert_eq!(rep.partition, "all");
    assert!(rep.health.hi >= 95.0, "HI {}", rep.health.hi);
    assert_eq!(rep.band, HealthBand::Healthy);
    assert_eq!(rep.band.exit_code(), 0);
}

#[test]
fn case2_scores_below_case1() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let hi = |name| assess(&simulated(name, 100, 8, tmp.path()), &f.artifact).unwrap().health.hi;
    let (c1, c2) = (hi("case1-pijf6quad.json"), hi("case2-pijf6quad.json"));
    assert!(c2 < c1, "case 1 {c1}, case 2 {c2}");
}

#[test]
fn monitor_appends_and_reacts_to_scenario_swap() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let live = tmp.path().join("live.json");
    let records = tmp.path().join("mon/records.jsonl");
    fs::copy(scenario_path("all-healthy-pijf6quad.json"), &live).unwrap();
    let r = run(100);
    let recs: Vec<_> = (0..3).map(|_| monitor_once(&live, &f.artifact, &r, &records).unwrap()).collect();
    assert!(recs.windows(2).all(|w| w[0].hi == w[1].hi));
    assert!(recs.windows(2).all(|w| w[1].timestamp_ms > w[0].timestamp_ms));
    assert_eq!(read_records(&records).unwrap(), recs);
    assert_eq!(recs[2].iteration, 2);

    fs::copy(scenario_path("large-fault-pijf6quad.json"), &live).unwrap();
    let swapped = monitor_once(&live, &f.artifact, &r, &records).unwrap();
    assert!(swapped.hi < recs[0].hi, "{} vs {}", swapped.hi, recs[0].hi);
    assert_eq!(read_records(&records).unwrap().len(), 4);
}

#[test]
fn corrupt_record_file_is_refused() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let records = tmp.path().join("records.jsonl");
    fs::write(&records, "{\"timestamp_ms\": 1}\nnot json\n").unwrap();
    let before = fs::read(&records).unwrap();
    let err = monitor_once(&scenario_path("all-healthy-pijf6quad.json"), &f.artifact, &run(10), &records).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
    assert_eq!(fs::read(&records).unwrap(), before);
}

#[test]
fn report_is_reproducible_and_complete() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let r = run(100);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let files = write_report(Some(&f.dataset), Some(&f.artifact), None, &r, &a).unwrap();
    write_report(Some(&f.dataset), Some(&f.artifact), None, &r, &b).unwrap();
    assert_eq!(tree(&a), tree(&b));
    assert!(write_report(None, None, None, &r, &a).is_err());

    let manifest = read_manifest(&f.dataset).unwrap();
    let batch = load_batch(&f.dataset, &manifest, Some(&[])).unwrap();
    let samples = baseline_reflectograms(&batch, f.artifact.velocity_factor)
        .unwrap()
        .values()
        .next()
        .unwrap()
        .len();
    let refl: Vec<_> = files
        .iter()
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("reflectogram_"))
        .collect();
    assert_eq!(refl.len(), 3);
    for p in refl {
        let rows = fs::read_to_string(p).unwrap().lines().count() - 1;
        assert_eq!(rows, samples, "{}", p.display());
    }

    let hi = fs::read_to_string(a.join("hi_vs_time.csv")).unwrap();
    assert_eq!(hi.lines().count() - 1, 180);
    let trace = hi_trace(&f.artifact, r.hi_batch, r.seed).unwrap();
    let p = plateaus(&trace);
    assert_eq!(p.iter().map(|p| (p.start, p.end)).collect::<Vec<_>>(), [(0, 50), (50, 100), (100, 180)]);
    let composite = p.iter().map(|p| p.mean_hi[3]).collect::<Vec<_>>();
    assert!(composite[0] > composite[2] && composite[2] > composite[1], "{composite:?}");
}
