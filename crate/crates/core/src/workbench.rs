//! End-to-end pipeline behind the command-line verbs: calibrate on a
//! dataset, assess held-out or fresh measurements, monitor a scenario over
//! time and emit plot-ready CSVs.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_batch, read_manifest, synthesize_batch, Batch, Manifest, Measurements};
use crate::error::{invalid, parse_err, Error, Result};
use crate::fusion::{
    compute_health_index, emulate_schedule, three_case_schedule, ConfusionModel, FlagRule, HealthReport, HiSample,
    MethodId, MethodPool, Priors, Profile, TrustWeights,
};
use crate::reflectometry::{calibrate_velocity_factor, correlate, detect_peaks, Reflectogram};
use crate::scenario::{derive_seed, CableScenario};
use crate::snr::mean_snr_db;
use crate::sparam::{average_cfr, cfr_from_sparams, CfrTrace};
use crate::state::CableState;
use crate::threshold::{class_means, load_key, thresholds_from_class_means, HealthyReference, ThresholdPair};

pub const ARTIFACT_VERSION: u32 = 1;
const TAG_SPLIT: u64 = 101;
const TAG_EMULATION: u64 = 102;

fn default_split() -> f64 {
    0.6
}
fn default_instances() -> [usize; 3] {
    [100; 3]
}
fn default_hi_batch() -> usize {
    20
}
fn default_monitor_instances() -> usize {
    20
}

/// Settings shared by every verb; loadable from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Instants per method (sparam, snr, omtdr).
    #[serde(default = "default_instances")]
    pub instances: [usize; 3],
    /// State priors for the Bayesian inversion; Case 1 when absent.
    #[serde(default)]
    pub priors: Option<Priors>,
    #[serde(default)]
    pub flag_rule: FlagRule,
    /// Draws per method behind each point of the HI-vs-time trace.
    #[serde(default = "default_hi_batch")]
    pub hi_batch: usize,
    /// Instants simulated per monitoring iteration.
    #[serde(default = "default_monitor_instances")]
    pub monitor_instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            seed: 0,
            split_fraction: default_split(),
            profile: Profile::default(),
            out: None,
            instances: default_instances(),
            priors: None,
            flag_rule: FlagRule::default(),
            hi_batch: default_hi_batch(),
            monitor_instances: default_monitor_instances(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(invalid(format!("split fraction {} must lie in (0, 1)", self.split_fraction)));
        }
        if self.instances.iter().any(|&n| n < 5) {
            return Err(invalid(format!("instance counts {:?} must each be >= 5", self.instances)));
        }
        if self.monitor_instances < 5 {
            return Err(invalid("monitor_instances must be >= 5"));
        }
        if self.hi_batch == 0 {
            return Err(invalid("hi_batch must be >= 1"));
        }
        if let Some(p) = &self.priors {
            p.validate()?;
        }
        Ok(())
    }

    pub fn priors(&self) -> Priors {
        self.priors.unwrap_or_default()
    }
}

/// Raw per-instant summaries: mean |CFR|, mean SNR (dB) and the largest
/// reflectogram fault peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub id: u64,
    pub state: CableState,
    pub load_w: f64,
    pub cfr: Option<CfrTrace>,
    pub psi2: Option<f64>,
    pub psi3: Option<f64>,
    pub fault_distance_m: Option<f64>,
}

impl Evidence {
    pub fn psi1(&self) -> Option<f64> {
        self.cfr.as_ref().map(|c| c.psi1)
    }

    fn raw(&self, m: MethodId) -> Option<f64> {
        match m {
            MethodId::Sparam => self.psi1(),
            MethodId::Snr => self.psi2,
            MethodId::Omtdr => self.psi3,
        }
    }
}

/// Reflectogram of every baseline, keyed by rounded load.
pub fn baseline_reflectograms(batch: &Batch, velocity_factor: f64) -> Result<BTreeMap<u32, Reflectogram>> {
    batch
        .baselines
        .iter()
        .map(|(k, w)| Ok((*k, correlate(&batch.probe, w, velocity_factor)?)))
        .collect()
}

/// Velocity factor from the lowest-load baseline and the known cable length,
/// falling back to the nominal value when no end-of-line echo is found.
pub fn calibrate_velocity(batch: &Batch, scenario: &CableScenario) -> Result<(f64, bool)> {
    let nominal = scenario.cable.velocity_factor;
    let Some(w) = batch.baselines.values().next() else {
        return Ok((nominal, false));
    };
    let r = correlate(&batch.probe, w, nominal)?;
    match calibrate_velocity_factor(&r, scenario.cable.length_m) {
        Ok(vf) => Ok((vf, true)),
        Err(Error::Calibration(_)) => Ok((nominal, false)),
        Err(e) => Err(e),
    }
}

pub fn extract_evidence(batch: &Batch, scenario: &CableScenario, velocity_factor: f64) -> Result<Vec<Evidence>> {
    let baselines = baseline_reflectograms(batch, velocity_factor)?;
    batch
        .measurements
        .iter()
        .map(|m| instant_evidence(m, batch, &baselines, scenario, velocity_factor))
        .collect()
}

fn instant_evidence(
    m: &Measurements,
    batch: &Batch,
    baselines: &BTreeMap<u32, Reflectogram>,
    scenario: &CableScenario,
    velocity_factor: f64,
) -> Result<Evidence> {
    let cfr = m.sparam.as_ref().map(cfr_from_sparams).transpose()?;
    let psi2 = match &m.snr {
        Some(traces) if !traces.is_empty() => {
            let mut sum = 0.0;
            for t in traces {
                sum += mean_snr_db(t)?;
            }
            Some(sum / traces.len() as f64)
        }
        _ => None,
    };
    let (psi3, fault_distance_m) = match &m.echo {
        Some(echo) => {
            let key = load_key(m.draw.load_w);
            let baseline = baselines.get(&key).ok_or_else(|| {
                Error::Inconsistent(format!("no baseline capture for the {} W load", m.draw.load_w))
            })?;
            let r = correlate(&batch.probe, echo, velocity_factor)?;
            let peaks = detect_peaks(&r, Some(baseline), scenario.omtdr.peak_threshold)?;
            let strongest = peaks.peaks.iter().max_by(|a, b| a.magnitude.total_cmp(&b.magnitude));
            (Some(peaks.psi3()), strongest.map(|p| p.distance_m))
        }
        None => (None, None),
    };
    Ok(Evidence {
        id: m.draw.id,
        state: m.draw.state,
        load_w: m.draw.load_w,
        cfr,
        psi2,
        psi3,
        fault_distance_m,
    })
}

/// Stratified, seeded split of instant ids into (calibration, assessment).
pub fn split_instants(manifest: &Manifest, fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_SPLIT, 0));
    let (mut cal, mut held) = (Vec::new(), Vec::new());
    for s in CableState::ALL {
        let mut ids: Vec<u64> = manifest.instants.iter().filter(|e| e.state == s).map(|e| e.id).collect();
        ids.shuffle(&mut rng);
        let n = ids.len();
        let mut k = (fraction * n as f64).round() as usize;
        if n >= 1 {
            k = k.max(1);
        }
        if n >= 2 {
            k = k.min(n - 1);
        }
        cal.extend_from_slice(&ids[..k]);
        held.extend_from_slice(&ids[k..]);
    }
    cal.sort_unstable();
    held.sort_unstable();
    Ok((cal, held))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCalibration {
    pub method: MethodId,
    pub thresholds: ThresholdPair,
    /// Healthy reference for methods whose raw summary falls with damage.
    pub reference: Option<HealthyReference>,
    /// Mean deviation score per state on the calibration partition.
    pub class_means: [f64; 3],
    /// Calibration deviation scores per state.
    pub pools: [Vec<f64>; 3],
    pub confusion: ConfusionModel,
}

impl MethodCalibration {
    pub fn deviation(&self, e: &Evidence) -> Option<f64> {
        let raw = e.raw(self.method)?;
        Some(match &self.reference {
            Some(r) => r.deviation(raw, Some(e.load_w)),
            None => raw,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub format_version: u32,
    pub config_hash: String,
    pub dataset_id: String,
    pub scenario_id: String,
    pub profile: Profile,
    pub priors: Priors,
    pub flag_rule: FlagRule,
    pub split_fraction: f64,
    pub seed: u64,
    pub velocity_factor: f64,
    pub velocity_factor_calibrated: bool,
    pub calibration_ids: Vec<u64>,
    pub assessment_ids: Vec<u64>,
    pub methods: Vec<MethodCalibration>,
    pub weights: TrustWeights,
}

impl CalibrationArtifact {
    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if a.format_version != ARTIFACT_VERSION {
            return Err(Error::Version(format!(
                "calibration artifact version {} is not supported (expected {ARTIFACT_VERSION})",
                a.format_version
            )));
        }
        if a.methods.len() != 3 || a.methods.iter().zip(MethodId::ALL).any(|(m, id)| m.method != id) {
            return Err(invalid("calibration artifact must list sparam, snr and omtdr in order"));
        }
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn check_compatible(&self, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::Version(format!(
                "calibration was made for measurement setup {} but the data uses {config_hash}",
                &self.config_hash[..12.min(self.config_hash.len())]
            )));
        }
        Ok(())
    }

    pub fn method(&self, m: MethodId) -> &MethodCalibration {
        &self.methods[m.index()]
    }
}

fn healthy_cfr_reference(evidence: &[&Evidence]) -> Result<HealthyReference> {
    let healthy: Vec<&CfrTrace> = evidence
        .iter()
        .filter(|e| e.state == CableState::Healthy)
        .filter_map(|e| e.cfr.as_ref())
        .collect();
    if healthy.is_empty() {
        return Err(Error::Calibration("sparam: no healthy calibration sweeps".into()));
    }
    let all: Vec<CfrTrace> = healthy.iter().map(|t| (*t).clone()).collect();
    let pooled = average_cfr(&all)?.psi1;
    let mut by_load: BTreeMap<u32, Vec<CfrTrace>> = BTreeMap::new();
    for t in &all {
        if let Some(l) = t.load_w {
            by_load.entry(load_key(l)).or_default().push(t.clone());
        }
    }
    let by_load = by_load
        .into_iter()
        .map(|(k, v)| Ok((k, average_cfr(&v)?.psi1)))
        .collect::<Result<_>>()?;
    Ok(HealthyReference { pooled, by_load })
}

fn calibrate_method(
    method: MethodId,
    evidence: &[&Evidence],
    profile: Profile,
    priors: &Priors,
) -> Result<MethodCalibration> {
    let reference = match method {
        MethodId::Sparam => Some(healthy_cfr_reference(evidence)?),
        MethodId::Snr => {
            let samples: Vec<(Option<f64>, f64)> = evidence
                .iter()
                .filter(|e| e.state == CableState::Healthy)
                .filter_map(|e| e.psi2.map(|v| (Some(e.load_w), v)))
                .collect();
            Some(
                HealthyReference::from_samples(&samples)
                    .map_err(|_| Error::Calibration("snr: no healthy calibration traces".into()))?,
            )
        }
        MethodId::Omtdr => None,
    };
    let mut pools: [Vec<f64>; 3] = Default::default();
    for e in evidence {
        if let Some(raw) = e.raw(method) {
            let d = match &reference {
                Some(r) => r.deviation(raw, Some(e.load_w)),
                None => raw,
            };
            pools[e.state.index()].push(d);
        }
    }
    let means = class_means(&pools).map_err(|e| Error::Calibration(format!("{method}: {e}")))?;
    let thresholds = thresholds_from_class_means(means, profile.placement())
        .map_err(|e| Error::Calibration(format!("{method}: {e}")))?;
    let confusion = ConfusionModel::from_scores(method, &pools, &thresholds, priors)?;
    Ok(MethodCalibration {
        method,
        thresholds,
        reference,
        class_means: means,
        pools,
        confusion,
    })
}

/// Calibrates every method on the calibration partition of a dataset.
pub fn calibrate(dir: &Path, run: &RunConfig) -> Result<CalibrationArtifact> {
    let manifest = read_manifest(dir)?;
    let counts = manifest.state_counts();
    if let Some(s) = CableState::ALL.iter().find(|s| counts[s.index()] == 0) {
        return Err(Error::Calibration(format!("dataset has no {s} instants")));
    }
    let (cal_ids, held_ids) = split_instants(&manifest, run.split_fraction, run.seed)?;
    let batch = load_batch(dir, &manifest, Some(&cal_ids))?;
    calibrate_batch(&batch, &manifest, cal_ids, held_ids, run)
}

pub fn calibrate_batch(
    batch: &Batch,
    manifest: &Manifest,
    calibration_ids: Vec<u64>,
    assessment_ids: Vec<u64>,
    run: &RunConfig,
) -> Result<CalibrationArtifact> {
    let scenario = &manifest.scenario;
    let (vf, vf_ok) = calibrate_velocity(batch, scenario)?;
    let evidence = extract_evidence(batch, scenario, vf)?;
    let cal: Vec<&Evidence> = evidence.iter().filter(|e| calibration_ids.contains(&e.id)).collect();
    let priors = run.priors();
    let methods = MethodId::ALL
        .iter()
        .map(|&m| calibrate_method(m, &cal, run.profile, &priors))
        .collect::<Result<Vec<_>>>()?;
    let models = [
        methods[0].confusion.clone(),
        methods[1].confusion.clone(),
        methods[2].confusion.clone(),
    ];
    let weights = TrustWeights::from_models(&models, &run.profile.coefficients())?;
    Ok(CalibrationArtifact {
        format_version: ARTIFACT_VERSION,
        config_hash: manifest.config_hash.clone(),
        dataset_id: manifest.dataset_id.clone(),
        scenario_id: scenario.id.clone(),
        profile: run.profile,
        priors,
        flag_rule: run.flag_rule,
        split_fraction: run.split_fraction,
        seed: run.seed,
        velocity_factor: vf,
        velocity_factor_calibrated: vf_ok,
        calibration_ids,
        assessment_ids,
        methods,
        weights,
    })
}

/// Operational HI bands mapped to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthBand {
    Healthy,
    Degraded,
    Critical,
}

impl HealthBand {
    pub fn from_hi(hi: f64) -> Self {
        if hi >= 80.0 {
            HealthBand::Healthy
        } else if hi >= 50.0 {
            HealthBand::Degraded
        } else {
            HealthBand::Critical
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            HealthBand::Healthy => 0,
            HealthBand::Degraded => 1,
            HealthBand::Critical => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAssessment {
    pub method: MethodId,
    pub instants: usize,
    pub verdict_counts: [usize; 3],
    pub flag_rate: f64,
    /// `confusion[true state][verdict]`.
    pub confusion: [[usize; 3]; 3],
    pub accuracy_by_state: [Option<f64>; 3],
    /// Healthy instants given any fault verdict.
    pub healthy_false_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocatedFault {
    pub instant: u64,
    pub distance_m: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub scenario_id: String,
    pub profile: Profile,
    /// `held-out` when assessing the calibration dataset, else `all`.
    pub partition: String,
    pub instants: usize,
    pub health: HealthReport,
    pub band: HealthBand,
    /// `(1 - share of large-fault instants) * 100` from the ground truth.
    pub ground_truth_hi: f64,
    pub methods: Vec<MethodAssessment>,
    pub located_faults: Vec<LocatedFault>,
}

/// Assesses `evidence` against a calibration.
pub fn assess_evidence(
    evidence: &[Evidence],
    artifact: &CalibrationArtifact,
    scenario_id: &str,
    partition: &str,
) -> Result<AssessmentReport> {
    if evidence.is_empty() {
        return Err(invalid("no instants to assess"));
    }
    let mut flags: [Vec<f64>; 3] = Default::default();
    let mut methods = Vec::new();
    for m in MethodId::ALL {
        let cal = artifact.method(m);
        let mut confusion = [[0usize; 3]; 3];
        for e in evidence {
            if let Some(d) = cal.deviation(e) {
                let v = cal.thresholds.classify(d);
                confusion[e.state.index()][v.index()] += 1;
                flags[m.index()].push(artifact.flag_rule.flag(v));
            }
        }
        let n: usize = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(invalid(format!("no {m} measurements to assess")));
        }
        let verdict_counts = [0, 1, 2].map(|y| (0..3).map(|s| confusion[s][y]).sum());
        let accuracy_by_state = [0, 1, 2].map(|s| {
            let row: usize = confusion[s].iter().sum();
            (row > 0).then(|| confusion[s][s] as f64 / row as f64)
        });
        let healthy_row: usize = confusion[0].iter().sum();
        methods.push(MethodAssessment {
            method: m,
            instants: n,
            verdict_counts,
            flag_rate: flags[m.index()].iter().sum::<f64>() / n as f64,
            confusion,
            accuracy_by_state,
            healthy_false_positive_rate: (healthy_row > 0)
                .then(|| (confusion[0][1] + confusion[0][2]) as f64 / healthy_row as f64),
        });
    }
    let health = compute_health_index([&flags[0], &flags[1], &flags[2]], &artifact.weights.w)?;

    let omtdr = artifact.method(MethodId::Omtdr);
    let located_faults = evidence
        .iter()
        .filter_map(|e| {
            let d = omtdr.deviation(e)?;
            (omtdr.thresholds.classify(d) != CableState::Healthy).then_some(())?;
            Some(LocatedFault {
                instant: e.id,
                distance_m: e.fault_distance_m?,
                magnitude: d,
            })
        })
        .collect();
    let large = evidence.iter().filter(|e| e.state == CableState::LargeFault).count();
    Ok(AssessmentReport {
        scenario_id: scenario_id.into(),
        profile: artifact.profile,
        partition: partition.into(),
        instants: evidence.len(),
        band: HealthBand::from_hi(health.hi),
        ground_truth_hi: (1.0 - large as f64 / evidence.len() as f64) * 100.0,
        health,
        methods,
        located_faults,
    })
}

/// Assesses a dataset: its held-out partition when it is the calibration
/// dataset, otherwise every instant.
pub fn assess(dir: &Path, artifact: &CalibrationArtifact) -> Result<AssessmentReport> {
    let manifest = read_manifest(dir)?;
    artifact.check_compatible(&manifest.config_hash)?;
    let (ids, partition) = if manifest.dataset_id == artifact.dataset_id {
        (Some(artifact.assessment_ids.as_slice()), "held-out")
    } else {
        (None, "all")
    };
    if ids.is_some_and(|i| i.is_empty()) || manifest.instants.is_empty() {
        return Err(invalid("dataset has no instants to assess"));
    }
    let batch = load_batch(dir, &manifest, ids)?;
    let evidence = extract_evidence(&batch, &manifest.scenario, artifact.velocity_factor)?;
    assess_evidence(&evidence, artifact, &manifest.scenario.id, partition)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub timestamp_ms: u64,
    pub scenario_id: String,
    pub iteration: u64,
    pub hi: f64,
    pub hi_sparam: f64,
    pub hi_snr: f64,
    pub hi_omtdr: f64,
    /// Verdict counts (H, F_s, F_l) per method.
    pub verdict_counts: [[usize; 3]; 3],
}

/// Reads a JSONL record file; a malformed line is reported by number.
pub fn read_records(path: &Path) -> Result<Vec<MonitorRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MonitorRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(i + 1, format!("{}: corrupt monitor record: {e}", path.display())))?;
        out.push(rec);
    }
    Ok(out)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One monitoring pass: re-reads the scenario, simulates a fresh batch,
/// assesses it and appends a record.
pub fn monitor_once(
    scenario_path: &Path,
    artifact: &CalibrationArtifact,
    run: &RunConfig,
    records_path: &Path,
) -> Result<MonitorRecord> {
    let existing = read_records(records_path)?;
    let scenario = CableScenario::from_json(&fs::read_to_string(scenario_path)?)?;
    artifact.check_compatible(&scenario.config_hash())?;
    let batch = synthesize_batch(&scenario, [run.monitor_instances; 3], run.seed)?;
    let evidence = extract_evidence(&batch, &scenario, artifact.velocity_factor)?;
    let report = assess_evidence(&evidence, artifact, &scenario.id, "all")?;

    let last = existing.iter().map(|r| r.timestamp_ms).max();
    let timestamp_ms = match last {
        Some(t) => now_ms().max(t + 1),
        None => now_ms(),
    };
    let rec = MonitorRecord {
        timestamp_ms,
        iteration: existing.len() as u64,
        scenario_id: scenario.id.clone(),
        hi: report.health.hi,
        hi_sparam: report.health.hi_sparam,
        hi_snr: report.health.hi_snr,
        hi_omtdr: report.health.hi_omtdr,
        verdict_counts: [0, 1, 2].map(|i| report.methods[i].verdict_counts),
    };
    if let Some(parent) = records_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(records_path)?;
    f.lock()?;
    let mut line = serde_json::to_string(&rec)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.unlock()?;
    Ok(rec)
}

/// HI trace over the three-case schedule, emulated from the calibration pools.
pub fn hi_trace(artifact: &CalibrationArtifact, batch: usize, seed: u64) -> Result<Vec<HiSample>> {
    let pools: [MethodPool; 3] = [0, 1, 2].map(|i| MethodPool {
        by_state: artifact.methods[i].pools.clone(),
        thresholds: artifact.methods[i].thresholds,
    });
    let likelihoods = [0, 1, 2].map(|i| artifact.methods[i].confusion.likelihood);
    emulate_schedule(
        &pools,
        &likelihoods,
        &artifact.profile.coefficients(),
        &three_case_schedule(),
        batch,
        artifact.flag_rule,
        derive_seed(seed, TAG_EMULATION, 0),
    )
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_io)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_io)?;
    for r in rows {
        w.write_record(&r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    v.to_string()
}

pub fn write_hi_csv(path: &Path, samples: &[HiSample]) -> Result<()> {
    write_rows(
        path,
        &["time_sample", "hi_sparam", "hi_snr", "hi_omtdr", "hi_composite"],
        samples.iter().map(|s| {
            vec![
                s.time_sample.to_string(),
                fmt(s.report.hi_sparam),
                fmt(s.report.hi_snr),
                fmt(s.report.hi_omtdr),
                fmt(s.report.hi),
            ]
        }),
    )
}

/// Per-segment means of an HI trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub segment: usize,
    pub start: usize,
    pub end: usize,
    pub ground_truth_hi: f64,
    /// Mean HI per method (sparam, snr, omtdr) then the composite.
    pub mean_hi: [f64; 4],
}

pub fn plateaus(samples: &[HiSample]) -> Vec<Plateau> {
    let mut out: Vec<Plateau> = Vec::new();
    for s in samples {
        let r = &s.report;
        let v = [r.hi_sparam, r.hi_snr, r.hi_omtdr, r.hi];
        match out.last_mut() {
            Some(p) if p.segment == s.segment => {
                p.end = s.time_sample + 1;
                for (m, x) in p.mean_hi.iter_mut().zip(v) {
                    *m += x;
                }
            }
            _ => out.push(Plateau {
                segment: s.segment,
                start: s.time_sample,
                end: s.time_sample + 1,
                ground_truth_hi: s.ground_truth_hi,
                mean_hi: v,
            }),
        }
    }
    for p in &mut out {
        let n = (p.end - p.start) as f64;
        for m in &mut p.mean_hi {
            *m /= n;
        }
    }
    out
}

fn write_reflectograms(dir: &Path, out: &Path, manifest: &Manifest, artifact: Option<&CalibrationArtifact>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for s in CableState::ALL {
        let Some(entry) = manifest.instants.iter().find(|e| e.state == s && e.omtdr.is_some()) else {
            continue;
        };
        let batch = load_batch(dir, manifest, Some(&[entry.id]))?;
        let vf = match artifact {
            Some(a) => a.velocity_factor,
            None => calibrate_velocity(&batch, &manifest.scenario)?.0,
        };
        let baselines = baseline_reflectograms(&batch, vf)?;
        let m = &batch.measurements[0];
        let r = correlate(&batch.probe, m.echo.as_ref().expect("entry has an echo"), vf)?;
        let b = baselines
            .get(&load_key(m.draw.load_w))
            .ok_or_else(|| Error::Inconsistent("no baseline for the instant's load".into()))?;
        let distances = r.distances_m();
        let residual: Vec<f64> = match (&r.trace, &b.trace) {
            (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| (p - q).norm()).collect(),
            _ => r.values.iter().zip(&b.values).map(|(p, q)| (p - q).max(0.0)).collect(),
        };
        let path = out.join(format!("reflectogram_{s}.csv"));
        write_rows(
            &path,
            &["sample_index", "distance_m", "magnitude", "baseline", "residual"],
            (0..r.len()).map(|i| {
                vec![i.to_string(), fmt(distances[i]), fmt(r.values[i]), fmt(b.values[i]), fmt(residual[i])]
            }),
        )?;
        written.push(path);
    }
    Ok(written)
}

fn write_spectra(dir: &Path, out: &Path, manifest: &Manifest) -> Result<Vec<PathBuf>> {
    let batch = load_batch(dir, manifest, None)?;
    let mut written = Vec::new();

    // Mean SNR per carrier and class, over instants and line ends.
    let mut snr_sum: [Option<(Vec<f64>, Vec<f64>, usize)>; 3] = Default::default();
    for m in &batch.measurements {
        for t in m.snr.iter().flatten() {
            let slot = snr_sum[m.draw.state.index()]
                .get_or_insert_with(|| (t.carrier_grid_hz.clone(), vec![0.0; t.snr_db.len()], 0));
            if slot.0.len() != t.snr_db.len() {
                return Err(Error::Inconsistent("SNR traces use different carrier grids".into()));
            }
            for (a, v) in slot.1.iter_mut().zip(&t.snr_db) {
                *a += v;
            }
            slot.2 += 1;
        }
    }
    if let Some(grid) = snr_sum.iter().flatten().map(|s| s.0.clone()).next() {
        let path = out.join("snr_spectrum.csv");
        write_rows(
            &path,
            &["carrier_hz", "snr_db_healthy", "snr_db_small_fault", "snr_db_large_fault"],
            (0..grid.len()).map(|k| {
                let mut row = vec![fmt(grid[k])];
                for s in &snr_sum {
                    row.push(s.as_ref().map(|(_, v, n)| fmt(v[k] / *n as f64)).unwrap_or_default());
                }
                row
            }),
        )?;
        written.push(path);
    }

    // Complex-averaged CFR per class at one load level shared by all classes.
    let loads: Vec<u32> = {
        let mut l: Vec<u32> = manifest.scenario.load_levels_w.iter().map(|&w| load_key(w)).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let cfr_at = |key: Option<u32>| -> [Vec<CfrTrace>; 3] {
        let mut by: [Vec<CfrTrace>; 3] = Default::default();
        for m in &batch.measurements {
            if key.is_some_and(|k| load_key(m.draw.load_w) != k) {
                continue;
            }
            if let Some(rec) = &m.sparam {
                if let Ok(c) = cfr_from_sparams(rec) {
                    by[m.draw.state.index()].push(c);
                }
            }
        }
        by
    };
    let mut chosen = None;
    for k in loads {
        let by = cfr_at(Some(k));
        if by.iter().all(|v| !v.is_empty()) {
            chosen = Some(by);
            break;
        }
    }
    let by = chosen.unwrap_or_else(|| cfr_at(None));
    let avg: Vec<Option<CfrTrace>> = by.iter().map(|v| average_cfr(v).ok()).collect();
    if let Some(grid) = avg.iter().flatten().map(|a| a.freq_grid_hz.clone()).next() {
        let path = out.join("cfr_spectrum.csv");
        let db = |c: Complex64| 20.0 * c.norm().max(1e-300).log10();
        write_rows(
            &path,
            &["freq_hz", "cfr_db_healthy", "cfr_db_small_fault", "cfr_db_large_fault"],
            (0..grid.len()).map(|k| {
                let mut row = vec![fmt(grid[k])];
                for a in &avg {
                    row.push(a.as_ref().map(|t| fmt(db(t.h[k]))).unwrap_or_default());
                }
                row
            }),
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Writes every plot-ready CSV the inputs allow; returns the files written.
pub fn write_report(
    dataset: Option<&Path>,
    artifact: Option<&CalibrationArtifact>,
    records: Option<&Path>,
    run: &RunConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if dataset.is_none() && artifact.is_none() && records.is_none() {
        return Err(invalid("report needs a dataset, a calibration or a monitor record file"));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    if let Some(dir) = dataset {
        let manifest = read_manifest(dir)?;
        if let Some(a) = artifact {
            a.check_compatible(&manifest.config_hash)?;
        }
        written.extend(write_reflectograms(dir, out, &manifest, artifact)?);
        written.extend(write_spectra(dir, out, &manifest)?);
    }
    if let Some(a) = artifact {
        let trace = hi_trace(a, run.hi_batch, run.seed)?;
        let path = out.join("hi_vs_time.csv");
        write_hi_csv(&path, &trace)?;
        written.push(path);
        let path = out.join("hi_plateaus.csv");
        write_rows(
            &path,
            &["segment", "start", "end", "ground_truth_hi", "hi_sparam", "hi_snr", "hi_omtdr", "hi_composite"],
            plateaus(&trace).into_iter().map(|p| {
                let mut row = vec![
                    p.segment.to_string(),
                    p.start.to_string(),
                    p.end.to_string(),
                    fmt(p.ground_truth_hi),
                ];
                row.extend(p.mean_hi.iter().map(|v| fmt(*v)));
                row
            }),
        )?;
        written.push(path);
    }
    if let Some(rp) = records {
        let recs = read_records(rp)?;
        if recs.is_empty() {
            return Err(invalid(format!("{} holds no monitor records", rp.display())));
        }
        let path = out.join("monitor_hi.csv");
        write_rows(
            &path,
            &["timestamp_ms", "iteration", "scenario_id", "hi_sparam", "hi_snr", "hi_omtdr", "hi_composite"],
            recs.iter().map(|r| {
                vec![
                    r.timestamp_ms.to_string(),
                    r.iteration.to_string(),
                    r.scenario_id.clone(),
                    fmt(r.hi_sparam),
                    fmt(r.hi_snr),
                    fmt(r.hi_omtdr),
                    fmt(r.hi),
                ]
            }),
        )?;
        written.push(path);
    }
    Ok(written)
}
