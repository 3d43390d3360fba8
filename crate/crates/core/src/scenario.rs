//! Cable scenarios and per-instant measurement synthesis.
//!
//! A scenario fixes the cable, the fault list used for each cable state,
//! the state mix, the load levels and the settings of the three
//! instruments. Each measurement instant draws a state and a load, then
//! synthesizes what the reflectometer, the network analyzer and the pair of
//! PLC modems would record.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{
    build_line_model, dft_grid, realize, s_parameters, synthesize_capture, synthesize_snr_trace, CableSpec,
    FaultSpec, LoadSpec,
};
use crate::error::{invalid, Result};
use crate::fusion::Priors;
use crate::reflectometry::{generate_probe, MultitoneConfig, Probe};
use crate::snr::{carrier_grid, LineEnd, SnrTrace};
use crate::sparam::SParamRecord;
use crate::state::CableState;
use crate::waveform::Waveform;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateFaults {
    #[serde(default)]
    pub healthy: Vec<FaultSpec>,
    #[serde(default)]
    pub small_fault: Vec<FaultSpec>,
    #[serde(default)]
    pub large_fault: Vec<FaultSpec>,
}

impl StateFaults {
    pub fn for_state(&self, s: CableState) -> &[FaultSpec] {
        match s {
            CableState::Healthy => &self.healthy,
            CableState::SmallFault => &self.small_fault,
            CableState::LargeFault => &self.large_fault,
        }
    }

    /// One 5 mm and one 3 cm damage at `position_m`, default perturbations.
    pub fn single_site(position_m: f64, z0_ohm: f64) -> Self {
        Self {
            healthy: Vec::new(),
            small_fault: vec![FaultSpec::with_default_perturbation(position_m, 0.005, z0_ohm)],
            large_fault: vec![FaultSpec::with_default_perturbation(position_m, 0.03, z0_ohm)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OmtdrSettings {
    pub probe: MultitoneConfig,
    /// Receiver SNR relative to probe power, dB.
    pub snr_db: f64,
    /// Symbols recorded per capture.
    pub symbols: usize,
    /// Symbols recorded for each healthy baseline.
    pub baseline_symbols: usize,
    /// Probe leakage through the coupler, relative to the probe.
    pub direct_coupling: f64,
    pub peak_threshold: f64,
}

impl Default for OmtdrSettings {
    fn default() -> Self {
        Self {
            probe: MultitoneConfig::default(),
            snr_db: 20.0,
            symbols: 1,
            baseline_symbols: 16,
            direct_coupling: 1.0,
            peak_threshold: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VnaSettings {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub points: usize,
    /// Port reference impedance; the cable's z0 when absent.
    #[serde(default)]
    pub reference_ohm: Option<f64>,
    /// Complex white noise on every S-parameter sample (std per component).
    pub noise_sigma: f64,
    /// Per-sweep relative gain error of the test-port couplers.
    pub gain_drift_sigma: f64,
}

impl Default for VnaSettings {
    fn default() -> Self {
        Self {
            start_hz: 2.0e6,
            stop_hz: 40.0e6,
            points: 191,
            reference_ohm: None,
            noise_sigma: 0.002,
            gain_drift_sigma: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlcSettings {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub carriers: usize,
    /// Transmit to noise PSD ratio, dB.
    pub tx_to_noise_db: f64,
    /// Per-trace offset (modem gain, background noise level), dB.
    pub trace_sigma_db: f64,
    /// Per-carrier estimation scatter, dB.
    pub carrier_sigma_db: f64,
}

impl Default for PlcSettings {
    fn default() -> Self {
        Self {
            start_hz: crate::snr::DEFAULT_CARRIER_START_HZ,
            stop_hz: crate::snr::DEFAULT_CARRIER_STOP_HZ,
            carriers: crate::snr::DEFAULT_CARRIER_COUNT,
            tx_to_noise_db: 45.0,
            trace_sigma_db: 0.05,
            carrier_sigma_db: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultVariability {
    /// Log-normal sigma of a per-instant factor on `z_perturbation_ohm`.
    pub perturbation_sigma: f64,
}

impl Default for FaultVariability {
    fn default() -> Self {
        Self {
            perturbation_sigma: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableScenario {
    pub id: String,
    pub cable: CableSpec,
    pub faults: StateFaults,
    pub mix: Priors,
    pub load_levels_w: Vec<f64>,
    #[serde(default)]
    pub omtdr: OmtdrSettings,
    #[serde(default)]
    pub vna: VnaSettings,
    #[serde(default)]
    pub plc: PlcSettings,
    #[serde(default)]
    pub variability: FaultVariability,
}

/// Everything that fixes how measurements are taken, as opposed to what is
/// being measured. Calibrations transfer between scenarios sharing it.
#[derive(Serialize)]
struct Setup<'a> {
    cable: &'a CableSpec,
    load_levels_w: &'a [f64],
    omtdr: &'a OmtdrSettings,
    vna: &'a VnaSettings,
    plc: &'a PlcSettings,
}

impl CableScenario {
    /// Balanced three-state scenario on `cable` with one fault site.
    pub fn balanced(id: &str, cable: CableSpec, fault_position_m: f64) -> Self {
        let z0 = cable.z0_ohm;
        Self {
            id: id.into(),
            faults: StateFaults::single_site(fault_position_m, z0),
            cable,
            mix: Priors {
                p_h: 1.0 / 3.0,
                p_fs: 1.0 / 3.0,
                p_fl: 1.0 / 3.0,
            },
            load_levels_w: vec![200.0, 400.0, 600.0],
            omtdr: OmtdrSettings::default(),
            vna: VnaSettings::default(),
            plc: PlcSettings::default(),
            variability: FaultVariability::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.cable.validate()?;
        self.mix.validate()?;
        if self.id.is_empty() {
            return Err(invalid("scenario id is empty"));
        }
        if self.load_levels_w.is_empty() {
            return Err(invalid("scenario needs at least one load level"));
        }
        for &l in &self.load_levels_w {
            LoadSpec::new(l).validate_rated()?;
        }
        for s in CableState::ALL {
            let faults = self.faults.for_state(s);
            // The worst damage on the cable decides its state.
            let worst = faults.iter().map(|f| f.severity_class).max();
            match worst {
                None if s != CableState::Healthy && self.mix.get(s) > 0.0 => {
                    return Err(invalid(format!("no faults listed for {s}, which the mix can draw")))
                }
                Some(w) if w != s => {
                    return Err(invalid(format!("worst fault listed under {s} is {w}")))
                }
                _ => {}
            }
            build_line_model(&self.cable, faults, &LoadSpec::open())?;
        }
        self.omtdr.probe.validate()?;
        let o = &self.omtdr;
        if !o.snr_db.is_finite() || o.symbols == 0 || o.baseline_symbols == 0 {
            return Err(invalid("OMTDR snr must be finite and symbol counts >= 1"));
        }
        if !(o.peak_threshold > 0.0 && o.direct_coupling.is_finite()) {
            return Err(invalid("OMTDR peak threshold must be > 0"));
        }
        let v = &self.vna;
        if !(v.start_hz > 0.0 && v.stop_hz > v.start_hz && v.points >= 2) {
            return Err(invalid("VNA sweep needs 0 < start < stop and >= 2 points"));
        }
        if v.reference_ohm.is_some_and(|r| !(r > 0.0)) {
            return Err(invalid("VNA reference impedance must be > 0"));
        }
        let p = &self.plc;
        if !(p.start_hz > 0.0 && p.stop_hz > p.start_hz && p.carriers >= 2 && p.tx_to_noise_db.is_finite()) {
            return Err(invalid("PLC carrier plan needs 0 < start < stop and >= 2 carriers"));
        }
        let sigmas = [
            v.noise_sigma,
            v.gain_drift_sigma,
            p.trace_sigma_db,
            p.carrier_sigma_db,
            self.variability.perturbation_sigma,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("noise and variability sigmas must be finite and >= 0"));
        }
        Ok(())
    }

    /// SHA-256 over the measurement setup (cable, loads, instrument settings).
    pub fn config_hash(&self) -> String {
        let setup = Setup {
            cable: &self.cable,
            load_levels_w: &self.load_levels_w,
            omtdr: &self.omtdr,
            vna: &self.vna,
            plc: &self.plc,
        };
        let bytes = serde_json::to_vec(&setup).expect("setup serializes");
        hex_digest(&bytes)
    }

    pub fn vna_grid(&self) -> Vec<f64> {
        let v = &self.vna;
        let step = (v.stop_hz - v.start_hz) / (v.points - 1) as f64;
        (0..v.points).map(|i| v.start_hz + step * i as f64).collect()
    }

    pub fn carrier_grid(&self) -> Vec<f64> {
        carrier_grid(self.plc.start_hz, self.plc.stop_hz, self.plc.carriers)
    }

    pub fn probe(&self) -> Result<Probe> {
        generate_probe(&self.omtdr.probe)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic sub-seed for (`base`, stream `tag`, `index`).
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_DRAW: u64 = 1;
const TAG_FAULT: u64 = 2;
const TAG_OMTDR: u64 = 3;
const TAG_VNA: u64 = 4;
const TAG_PLC: u64 = 5;
const TAG_BASELINE: u64 = 6;

/// Ground truth of one measurement instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstantDraw {
    pub id: u64,
    pub state: CableState,
    pub load_w: f64,
}

pub fn draw_instants(scenario: &CableScenario, count: usize, seed: u64) -> Vec<InstantDraw> {
    (0..count as u64)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_DRAW, id));
            let u: f64 = rng.random();
            let m = &scenario.mix;
            let state = if u < m.p_h {
                CableState::Healthy
            } else if u < m.p_h + m.p_fs {
                CableState::SmallFault
            } else {
                CableState::LargeFault
            };
            let load_w = scenario.load_levels_w[rng.random_range(0..scenario.load_levels_w.len())];
            InstantDraw { id, state, load_w }
        })
        .collect()
}

/// State faults with the per-instant perturbation factor applied.
pub fn instant_faults(scenario: &CableScenario, draw: &InstantDraw, seed: u64) -> Vec<FaultSpec> {
    let sigma = scenario.variability.perturbation_sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_FAULT, draw.id));
    let factor = if sigma > 0.0 {
        LogNormal::new(0.0, sigma).expect("sigma validated").sample(&mut rng)
    } else {
        1.0
    };
    scenario
        .faults
        .for_state(draw.state)
        .iter()
        .map(|f| FaultSpec {
            z_perturbation_ohm: f.z_perturbation_ohm * factor,
            ..f.clone()
        })
        .collect()
}

/// Synthesizes the three instruments' records for one instant.
pub struct Synthesizer<'a> {
    pub scenario: &'a CableScenario,
    pub probe: Probe,
    pub seed: u64,
    omtdr_grid: Vec<f64>,
    vna_grid: Vec<f64>,
    carriers: Vec<f64>,
}

impl<'a> Synthesizer<'a> {
    pub fn new(scenario: &'a CableScenario, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let probe = scenario.probe()?;
        let omtdr_grid = dft_grid(probe.waveform.sample_rate_hz, probe.waveform.len());
        Ok(Self {
            vna_grid: scenario.vna_grid(),
            carriers: scenario.carrier_grid(),
            scenario,
            probe,
            seed,
            omtdr_grid,
        })
    }

    fn omtdr_capture(&self, faults: &[FaultSpec], load_w: f64, symbols: usize, snr_db: f64, seed: u64) -> Result<Waveform> {
        let model = build_line_model(&self.scenario.cable, faults, &LoadSpec::new(load_w))?;
        let real = realize(&model, &self.omtdr_grid, seed)?;
        let mut samples = Vec::with_capacity(symbols * self.probe.waveform.len());
        for k in 0..symbols as u64 {
            let w = synthesize_capture(
                &self.probe.waveform,
                &real,
                self.scenario.omtdr.direct_coupling,
                snr_db,
                derive_seed(seed, k, 0),
            )?;
            samples.extend(w.samples);
        }
        Ok(Waveform::new(self.probe.waveform.sample_rate_hz, samples))
    }

    /// Healthy-cable capture at one load level.
    pub fn baseline(&self, load_w: f64) -> Result<Waveform> {
        let o = &self.scenario.omtdr;
        let seed = derive_seed(self.seed, TAG_BASELINE, load_w.to_bits());
        self.omtdr_capture(&self.scenario.faults.healthy, load_w, o.baseline_symbols, o.snr_db, seed)
    }

    pub fn echo(&self, draw: &InstantDraw) -> Result<Waveform> {
        let o = &self.scenario.omtdr;
        let faults = instant_faults(self.scenario, draw, self.seed);
        let seed = derive_seed(self.seed, TAG_OMTDR, draw.id);
        self.omtdr_capture(&faults, draw.load_w, o.symbols, o.snr_db, seed)
    }

    pub fn sparams(&self, draw: &InstantDraw) -> Result<SParamRecord> {
        let v = &self.scenario.vna;
        let faults = instant_faults(self.scenario, draw, self.seed);
        let reference = v.reference_ohm.unwrap_or(self.scenario.cable.z0_ohm);
        let model = build_line_model(&self.scenario.cable, &faults, &LoadSpec::new(draw.load_w))?
            .with_reference(reference);
        let s = s_parameters(&model, &self.vna_grid)?;
        let mut rec = SParamRecord::from_matrices(&self.vna_grid, &s, reference);
        rec.instant_id = draw.id;
        rec.load_w = Some(draw.load_w);

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, TAG_VNA, draw.id));
        let gain = 1.0 + normal(v.gain_drift_sigma).sample(&mut rng);
        let noise = normal(v.noise_sigma);
        for vals in [&mut rec.s11, &mut rec.s21, &mut rec.s12, &mut rec.s22] {
            for x in vals.iter_mut() {
                *x = *x * gain + Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        Ok(rec)
    }

    /// Near- and far-end SNR traces.
    pub fn snr(&self, draw: &InstantDraw) -> Result<[SnrTrace; 2]> {
        let p = &self.scenario.plc;
        let faults = instant_faults(self.scenario, draw, self.seed);
        let model = build_line_model(&self.scenario.cable, &faults, &LoadSpec::new(draw.load_w))?;
        let real = realize(&model, &self.carriers, 0)?;
        let clean = synthesize_snr_trace(&real, 10f64.powf(p.tx_to_noise_db / 10.0), 1.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, TAG_PLC, draw.id));
        let per_trace = normal(p.trace_sigma_db);
        let per_carrier = normal(p.carrier_sigma_db);
        let mut out = [clean.clone(), clean];
        for (t, end) in out.iter_mut().zip([LineEnd::Near, LineEnd::Far]) {
            t.end = end;
            t.instant_id = draw.id;
            t.load_w = Some(draw.load_w);
            let offset = per_trace.sample(&mut rng);
            for v in &mut t.snr_db {
                *v += offset + per_carrier.sample(&mut rng);
            }
        }
        Ok(out)
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated finite and >= 0")
}
