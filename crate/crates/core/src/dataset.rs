//! On-disk datasets: one directory per modality plus a manifest carrying the
//! ground truth.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/omtdr/probe.bin              probe symbol (binary column)
//! <dir>/omtdr/baseline_<W>w.bin      healthy capture per load level
//! <dir>/omtdr/echo_<id>.bin          capture per instant
//! <dir>/sparam/instant_<id>.s2p      Touchstone, RI, Hz
//! <dir>/snr/instant_<id>.csv         near and far traces
//! ```
//!
//! Modality `k` is recorded for instants `0..instances[k]`, so the three
//! methods may see different numbers of instants.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fusion::MethodId;
use crate::reflectometry::Probe;
use crate::scenario::{draw_instants, hex_digest, CableScenario, InstantDraw, Synthesizer};
use crate::snr::{parse_snr_csv, write_snr_csv, SnrTrace};
use crate::sparam::{parse_touchstone, write_touchstone, DataFormat, SParamRecord};
use crate::state::CableState;
use crate::threshold::load_key;
use crate::waveform::{read_column_binary, write_column_binary, ColumnHeader, Waveform};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantEntry {
    pub id: u64,
    pub state: CableState,
    pub load_w: f64,
    pub sparam: Option<String>,
    pub snr: Option<String>,
    pub omtdr: Option<String>,
}

impl InstantEntry {
    pub fn draw(&self) -> InstantDraw {
        InstantDraw {
            id: self.id,
            state: self.state,
            load_w: self.load_w,
        }
    }

    pub fn has(&self, m: MethodId) -> bool {
        match m {
            MethodId::Sparam => self.sparam.is_some(),
            MethodId::Snr => self.snr.is_some(),
            MethodId::Omtdr => self.omtdr.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub load_w: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset_id: String,
    pub config_hash: String,
    pub seed: u64,
    /// Instants recorded per method (sparam, snr, omtdr).
    pub instances: [usize; 3],
    pub scenario: CableScenario,
    pub probe_file: String,
    pub baselines: Vec<BaselineEntry>,
    pub instants: Vec<InstantEntry>,
}

impl Manifest {
    pub fn state_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for i in &self.instants {
            c[i.state.index()] += 1;
        }
        c
    }
}

/// Captured or simulated records of one instant, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub draw: InstantDraw,
    pub sparam: Option<SParamRecord>,
    pub snr: Option<Vec<SnrTrace>>,
    pub echo: Option<Waveform>,
}

/// Everything the analyzers need from a dataset.
#[derive(Debug, Clone)]
pub struct Batch {
    pub probe: Probe,
    /// Healthy captures keyed by rounded load.
    pub baselines: BTreeMap<u32, Waveform>,
    pub measurements: Vec<Measurements>,
}

fn validate_counts(instances: [usize; 3]) -> Result<()> {
    if instances.iter().all(|&n| n == 0) {
        return Err(invalid("at least one method needs instances"));
    }
    Ok(())
}

/// Synthesizes a batch in memory.
pub fn synthesize_batch(scenario: &CableScenario, instances: [usize; 3], seed: u64) -> Result<Batch> {
    validate_counts(instances)?;
    let syn = Synthesizer::new(scenario, seed)?;
    let total = *instances.iter().max().unwrap();
    let mut baselines = BTreeMap::new();
    for &l in &scenario.load_levels_w {
        baselines.insert(load_key(l), syn.baseline(l)?);
    }
    let measurements = draw_instants(scenario, total, seed)
        .into_iter()
        .map(|d| {
            let i = d.id as usize;
            Ok(Measurements {
                sparam: (i < instances[0]).then(|| syn.sparams(&d)).transpose()?,
                snr: (i < instances[1]).then(|| syn.snr(&d).map(Vec::from)).transpose()?,
                echo: (i < instances[2]).then(|| syn.echo(&d)).transpose()?,
                draw: d,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Batch {
        probe: syn.probe,
        baselines,
        measurements,
    })
}

fn dataset_id(scenario: &CableScenario, instances: [usize; 3], seed: u64) -> Result<String> {
    let bytes = serde_json::to_vec(&(scenario, instances, seed))?;
    Ok(hex_digest(&bytes))
}

fn write_binary_file(path: &Path, rate: f64, oversampling: u32, values: &[f64]) -> Result<()> {
    let f = BufWriter::new(fs::File::create(path)?);
    write_column_binary(
        f,
        ColumnHeader {
            sample_rate_hz: rate,
            oversampling,
        },
        values,
    )
}

fn read_binary_file(path: &Path) -> Result<Waveform> {
    let (h, values) = read_column_binary(BufReader::new(fs::File::open(path)?))?;
    Ok(Waveform::new(h.sample_rate_hz, values))
}

/// Writes a simulated dataset into `dir` (created if needed) and returns
/// its manifest. Output is byte-identical for identical inputs.
pub fn simulate_dataset(scenario: &CableScenario, instances: [usize; 3], seed: u64, dir: &Path) -> Result<Manifest> {
    let batch = synthesize_batch(scenario, instances, seed)?;
    for sub in ["omtdr", "sparam", "snr"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let cfg = &scenario.omtdr.probe;
    let rate = cfg.effective_rate_hz();
    let probe_file = "omtdr/probe.bin".to_string();
    write_binary_file(&dir.join(&probe_file), rate, cfg.oversampling, &batch.probe.waveform.samples)?;

    let mut baselines = Vec::new();
    for &l in &scenario.load_levels_w {
        let key = load_key(l);
        let file = format!("omtdr/baseline_{key}w.bin");
        write_binary_file(&dir.join(&file), rate, cfg.oversampling, &batch.baselines[&key].samples)?;
        if !baselines.iter().any(|b: &BaselineEntry| load_key(b.load_w) == key) {
            baselines.push(BaselineEntry { load_w: l, file });
        }
    }

    let mut instants = Vec::with_capacity(batch.measurements.len());
    for m in &batch.measurements {
        let id = m.draw.id;
        let mut entry = InstantEntry {
            id,
            state: m.draw.state,
            load_w: m.draw.load_w,
            sparam: None,
            snr: None,
            omtdr: None,
        };
        if let Some(rec) = &m.sparam {
            let file = format!("sparam/instant_{id:04}.s2p");
            fs::write(dir.join(&file), write_touchstone(rec, DataFormat::Ri))?;
            entry.sparam = Some(file);
        }
        if let Some(traces) = &m.snr {
            let file = format!("snr/instant_{id:04}.csv");
            write_snr_csv(BufWriter::new(fs::File::create(dir.join(&file))?), traces)?;
            entry.snr = Some(file);
        }
        if let Some(echo) = &m.echo {
            let file = format!("omtdr/echo_{id:04}.bin");
            write_binary_file(&dir.join(&file), rate, cfg.oversampling, &echo.samples)?;
            entry.omtdr = Some(file);
        }
        instants.push(entry);
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dataset_id: dataset_id(scenario, instances, seed)?,
        config_hash: scenario.config_hash(),
        seed,
        instances,
        scenario: scenario.clone(),
        probe_file,
        baselines,
        instants,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Version(format!(
            "dataset format {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    m.scenario.validate()?;
    Ok(m)
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Loads the records of `instants` (all when `None`).
pub fn load_batch(dir: &Path, manifest: &Manifest, instants: Option<&[u64]>) -> Result<Batch> {
    let cfg = manifest.scenario.omtdr.probe.clone();
    let probe = Probe {
        waveform: read_binary_file(&dir.join(&manifest.probe_file))?,
        config: cfg,
    };
    let mut baselines = BTreeMap::new();
    for b in &manifest.baselines {
        baselines.insert(load_key(b.load_w), read_binary_file(&dir.join(&b.file))?);
    }
    let wanted = |id: u64| instants.is_none_or(|ids| ids.contains(&id));
    let mut measurements = Vec::new();
    for e in manifest.instants.iter().filter(|e| wanted(e.id)) {
        let sparam = match &e.sparam {
            Some(f) => {
                let path: PathBuf = dir.join(f);
                let rec = with_path(&path, parse_touchstone(&fs::read_to_string(&path)?))?;
                if rec.instant_id != e.id {
                    return Err(Error::Inconsistent(format!("{} holds instant {}", path.display(), rec.instant_id)));
                }
                Some(rec)
            }
            None => None,
        };
        let snr = match &e.snr {
            Some(f) => {
                let path = dir.join(f);
                let traces = with_path(&path, parse_snr_csv(BufReader::new(fs::File::open(&path)?)))?;
                if traces.is_empty() || traces.iter().any(|t| t.instant_id != e.id) {
                    return Err(Error::Inconsistent(format!("{} does not hold instant {}", path.display(), e.id)));
                }
                Some(traces)
            }
            None => None,
        };
        let echo = e.omtdr.as_ref().map(|f| read_binary_file(&dir.join(f))).transpose()?;
        measurements.push(Measurements {
            draw: e.draw(),
            sparam,
            snr,
            echo,
        });
    }
    Ok(Batch {
        probe,
        baselines,
        measurements,
    })
}
