//! Transmission-line channel simulator.
//!
//! A cable is modelled as a cascade of uniform lossy line segments. Each
//! insulation fault is a short section of the same line carrying an extra
//! series resistance (`z_perturbation_ohm`, spread over the damaged length),
//! which perturbs the local characteristic impedance. The far end is
//! terminated by the load's 50 Hz equivalent resistance.
//!
//! Two views of the channel are produced:
//!
//! * `gamma_in`: reflection looking into the injection end, with the line
//!   terminated by the load alone (what a reflectometer sees).
//! * `h_fwd`: forward transmission S21 between reference-impedance ports at
//!   both ends, the load shunting the far-end port (what a VNA or a pair of
//!   PLC modems coupled at both ends see).

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{invalid, Result};
use crate::snr::{LineEnd, SnrTrace};
use crate::state::CableState;
use crate::waveform::Waveform;

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;
pub const SUPPLY_VOLTAGE_V: f64 = 110.0;
pub const MAX_LOAD_W: f64 = 600.0;
pub const DEFAULT_VELOCITY_FACTOR: f64 = 0.66;

/// Default series perturbation as a fraction of z0, per severity class.
pub const HEALTHY_PERTURBATION_FRACTION: f64 = 0.01;
pub const SMALL_PERTURBATION_FRACTION: f64 = 0.05;
pub const LARGE_PERTURBATION_FRACTION: f64 = 0.20;

/// Start of the half-Hann roll-off applied before inverting `gamma_in`,
/// as a fraction of Nyquist.
const IR_TAPER_START: f64 = 0.75;

type C = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableSpec {
    pub label: String,
    pub length_m: f64,
    pub z0_ohm: f64,
    pub velocity_factor: f64,
    pub attenuation_db_per_m_at_1mhz: f64,
    pub attenuation_freq_exponent: f64,
}

impl CableSpec {
    /// 24 m polyethylene-insulated jelly-filled 6-quad cable.
    pub fn pijf_6quad() -> Self {
        Self {
            label: "PIJF-6quad".into(),
            length_m: 24.0,
            z0_ohm: 75.0,
            velocity_factor: 0.62,
            attenuation_db_per_m_at_1mhz: 0.02,
            attenuation_freq_exponent: 0.5,
        }
    }

    /// 7.2 m polyethylene-insulated jelly-filled 10 twisted-pair cable.
    pub fn pijf_10twp() -> Self {
        Self {
            label: "PIJF-10TWP".into(),
            length_m: 7.2,
            z0_ohm: 75.0,
            velocity_factor: 0.58,
            attenuation_db_per_m_at_1mhz: 0.025,
            attenuation_freq_exponent: 0.5,
        }
    }

    /// 70 m symmetrical four-core cable.
    pub fn sym_4core() -> Self {
        Self {
            label: "sym-4core".into(),
            length_m: 70.0,
            z0_ohm: 100.0,
            velocity_factor: DEFAULT_VELOCITY_FACTOR,
            attenuation_db_per_m_at_1mhz: 0.015,
            attenuation_freq_exponent: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m.is_finite() && self.length_m >= 0.0) {
            return Err(invalid(format!("cable length {} m must be >= 0", self.length_m)));
        }
        if !(self.z0_ohm.is_finite() && self.z0_ohm > 0.0) {
            return Err(invalid(format!("z0 {} ohm must be > 0", self.z0_ohm)));
        }
        if !(self.velocity_factor > 0.0 && self.velocity_factor < 1.0) {
            return Err(invalid(format!(
                "velocity factor {} must lie in (0, 1)",
                self.velocity_factor
            )));
        }
        if !(self.attenuation_db_per_m_at_1mhz.is_finite() && self.attenuation_db_per_m_at_1mhz >= 0.0) {
            return Err(invalid("attenuation must be finite and >= 0"));
        }
        if !(0.4..=1.0).contains(&self.attenuation_freq_exponent) {
            return Err(invalid(format!(
                "attenuation exponent {} must lie in [0.4, 1.0]",
                self.attenuation_freq_exponent
            )));
        }
        Ok(())
    }

    pub fn velocity_m_per_s(&self) -> f64 {
        self.velocity_factor * SPEED_OF_LIGHT_M_PER_S
    }

    /// Power-law conductor/dielectric attenuation in nepers per metre.
    pub fn attenuation_np_per_m(&self, freq_hz: f64) -> f64 {
        let db = self.attenuation_db_per_m_at_1mhz
            * (freq_hz.abs() / 1e6).powf(self.attenuation_freq_exponent);
        db * std::f64::consts::LN_10 / 20.0
    }

    pub fn round_trip_delay_s(&self, distance_m: f64) -> f64 {
        2.0 * distance_m / self.velocity_m_per_s()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Start of the damaged section, metres from the injection end.
    pub position_m: f64,
    /// Physical damage length.
    pub extent_m: f64,
    pub severity_class: CableState,
    /// Series resistance added along the damaged section (ohms, >= 0).
    pub z_perturbation_ohm: f64,
}

impl FaultSpec {
    /// Fault whose class follows from `extent_m` and whose perturbation is
    /// the class default for a cable of impedance `z0_ohm`.
    pub fn with_default_perturbation(position_m: f64, extent_m: f64, z0_ohm: f64) -> Self {
        let severity_class = CableState::from_extent(extent_m);
        Self {
            position_m,
            extent_m,
            severity_class,
            z_perturbation_ohm: default_perturbation_ohm(severity_class, z0_ohm),
        }
    }

    pub fn end_m(&self) -> f64 {
        self.position_m + self.extent_m
    }

    pub fn validate(&self, cable: &CableSpec) -> Result<()> {
        if !(self.position_m.is_finite() && self.position_m >= 0.0) {
            return Err(invalid(format!("fault position {} m is negative", self.position_m)));
        }
        if !(self.extent_m.is_finite() && self.extent_m >= 0.0) {
            return Err(invalid(format!("fault extent {} m is negative", self.extent_m)));
        }
        if self.end_m() > cable.length_m + 1e-9 {
            return Err(invalid(format!(
                "fault at {}..{} m extends beyond the {} m cable",
                self.position_m,
                self.end_m(),
                cable.length_m
            )));
        }
        let implied = CableState::from_extent(self.extent_m);
        if implied != self.severity_class {
            return Err(invalid(format!(
                "fault extent {} m implies {implied}, not {}",
                self.extent_m, self.severity_class
            )));
        }
        if !(self.z_perturbation_ohm.is_finite() && self.z_perturbation_ohm >= 0.0) {
            return Err(invalid("z perturbation must be finite and >= 0 (passive)"));
        }
        Ok(())
    }
}

pub fn default_perturbation_ohm(class: CableState, z0_ohm: f64) -> f64 {
    let frac = match class {
        CableState::Healthy => HEALTHY_PERTURBATION_FRACTION,
        CableState::SmallFault => SMALL_PERTURBATION_FRACTION,
        CableState::LargeFault => LARGE_PERTURBATION_FRACTION,
    };
    frac * z0_ohm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub power_w: f64,
    #[serde(default = "default_supply")]
    pub supply_v: f64,
}

fn default_supply() -> f64 {
    SUPPLY_VOLTAGE_V
}

impl LoadSpec {
    pub fn new(power_w: f64) -> Self {
        Self {
            power_w,
            supply_v: SUPPLY_VOLTAGE_V,
        }
    }

    pub fn open() -> Self {
        Self::new(0.0)
    }

    /// `V^2 / P`, or `None` for an open circuit (no load).
    pub fn equivalent_impedance_ohm(&self) -> Option<f64> {
        if self.power_w == 0.0 {
            None
        } else {
            Some(self.supply_v * self.supply_v / self.power_w)
        }
    }

    /// Load that presents exactly `ohms` at the supply voltage.
    pub fn matched_to(ohms: f64) -> Self {
        Self::new(SUPPLY_VOLTAGE_V * SUPPLY_VOLTAGE_V / ohms)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.supply_v.is_finite() && self.supply_v > 0.0) {
            return Err(invalid("supply voltage must be > 0"));
        }
        // Matched test loads may exceed the lamp bank rating, so only the sign is checked here.
        if !(self.power_w.is_finite() && self.power_w >= 0.0) {
            return Err(invalid(format!("load power {} W must be >= 0", self.power_w)));
        }
        Ok(())
    }

    /// Lamp-bank range accepted in scenario files.
    pub fn validate_rated(&self) -> Result<()> {
        self.validate()?;
        if self.power_w > MAX_LOAD_W {
            return Err(invalid(format!("load {} W exceeds {MAX_LOAD_W} W", self.power_w)));
        }
        Ok(())
    }
}

/// One piece of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_m: f64,
    pub length_m: f64,
    /// Extra series resistance spread over the segment; 0 for intact line.
    pub series_ohm: f64,
}

/// ABCD (chain) matrix of a two-port at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abcd {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl Abcd {
    pub fn identity() -> Self {
        Self {
            a: C::new(1.0, 0.0),
            b: C::new(0.0, 0.0),
            c: C::new(0.0, 0.0),
            d: C::new(1.0, 0.0),
        }
    }

    pub fn series(z: C) -> Self {
        Self {
            b: z,
            ..Self::identity()
        }
    }

    pub fn shunt(y: C) -> Self {
        Self {
            c: y,
            ..Self::identity()
        }
    }

    pub fn line(z_c: C, gamma_len: C) -> Self {
        let (ch, sh) = (gamma_len.cosh(), gamma_len.sinh());
        Self {
            a: ch,
            b: z_c * sh,
            c: sh / z_c,
            d: ch,
        }
    }

    /// `self` followed by `rhs`.
    pub fn cascade(&self, rhs: &Abcd) -> Abcd {
        Abcd {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }

    /// Input impedance with `load` on port 2 (`None` = open circuit).
    pub fn input_impedance(&self, load: Option<C>) -> Option<C> {
        let (num, den) = match load {
            Some(z) => (self.a * z + self.b, self.c * z + self.d),
            None => (self.a, self.c),
        };
        if den == C::new(0.0, 0.0) {
            None
        } else {
            Some(num / den)
        }
    }

    pub fn to_s(&self, z_ref: f64) -> SMatrix {
        let z = C::new(z_ref, 0.0);
        let delta = self.a + self.b / z + self.c * z + self.d;
        SMatrix {
            s11: (self.a + self.b / z - self.c * z - self.d) / delta,
            s21: C::new(2.0, 0.0) / delta,
            s12: C::new(2.0, 0.0) * (self.a * self.d - self.b * self.c) / delta,
            s22: (-self.a + self.b / z - self.c * z + self.d) / delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SMatrix {
    pub s11: C,
    pub s21: C,
    pub s12: C,
    pub s22: C,
}

/// Cable cascade plus load, ready for frequency-domain evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPortModel {
    pub cable: CableSpec,
    pub segments: Vec<Segment>,
    pub load: LoadSpec,
    /// Port reference impedance; defaults to the cable's z0.
    pub reference_ohm: f64,
}

pub fn build_line_model(cable: &CableSpec, faults: &[FaultSpec], load: &LoadSpec) -> Result<TwoPortModel> {
    cable.validate()?;
    load.validate()?;
    let mut sorted: Vec<&FaultSpec> = faults.iter().collect();
    sorted.sort_by(|a, b| a.position_m.total_cmp(&b.position_m));
    for f in &sorted {
        f.validate(cable)?;
    }
    for pair in sorted.windows(2) {
        if pair[0].end_m() > pair[1].position_m {
            return Err(invalid(format!(
                "faults at {} m and {} m overlap",
                pair[0].position_m, pair[1].position_m
            )));
        }
    }

    let mut segments = Vec::with_capacity(2 * sorted.len() + 1);
    let mut cursor = 0.0;
    for f in sorted {
        if f.position_m > cursor {
            segments.push(Segment {
                start_m: cursor,
                length_m: f.position_m - cursor,
                series_ohm: 0.0,
            });
        }
        segments.push(Segment {
            start_m: f.position_m,
            length_m: f.extent_m,
            series_ohm: f.z_perturbation_ohm,
        });
        cursor = f.end_m();
    }
    if cursor < cable.length_m || segments.is_empty() {
        segments.push(Segment {
            start_m: cursor,
            length_m: (cable.length_m - cursor).max(0.0),
            series_ohm: 0.0,
        });
    }

    Ok(TwoPortModel {
        cable: cable.clone(),
        segments,
        load: *load,
        reference_ohm: cable.z0_ohm,
    })
}

impl TwoPortModel {
    pub fn with_reference(mut self, reference_ohm: f64) -> Self {
        self.reference_ohm = reference_ohm;
        self
    }

    fn segment_abcd(&self, seg: &Segment, freq_hz: f64) -> Abcd {
        let cable = &self.cable;
        let z0 = cable.z0_ohm;
        let v = cable.velocity_m_per_s();
        let alpha = cable.attenuation_np_per_m(freq_hz);
        let omega = 2.0 * std::f64::consts::PI * freq_hz;

        if seg.series_ohm == 0.0 {
            let gamma = C::new(alpha, omega / v);
            return Abcd::line(C::new(z0, 0.0), gamma * seg.length_m);
        }
        if freq_hz == 0.0 || seg.length_m <= 0.0 {
            // Electrically zero length: only the lumped series resistance remains.
            return Abcd::series(C::new(seg.series_ohm, 0.0));
        }
        // Telegrapher parameters of the intact line, with the fault resistance
        // added to the series branch.
        let l_per_m = z0 / v;
        let c_per_m = 1.0 / (z0 * v);
        let r_per_m = 2.0 * alpha * z0 + seg.series_ohm / seg.length_m;
        let z_series = C::new(r_per_m, omega * l_per_m);
        let y_shunt = C::new(0.0, omega * c_per_m);
        let z_c = (z_series / y_shunt).sqrt();
        let gamma = (z_series * y_shunt).sqrt();
        Abcd::line(z_c, gamma * seg.length_m)
    }

    /// Chain matrix of the cable alone (no load) at one frequency.
    pub fn cable_abcd(&self, freq_hz: f64) -> Abcd {
        self.segments
            .iter()
            .fold(Abcd::identity(), |acc, s| acc.cascade(&self.segment_abcd(s, freq_hz)))
    }

    /// Scattering matrix between reference ports with the load shunting port 2.
    pub fn s_matrix(&self, freq_hz: f64) -> SMatrix {
        let mut m = self.cable_abcd(freq_hz);
        if let Some(z_l) = self.load.equivalent_impedance_ohm() {
            m = m.cascade(&Abcd::shunt(C::new(1.0 / z_l, 0.0)));
        }
        m.to_s(self.reference_ohm)
    }

    fn gamma_at(&self, freq_hz: f64) -> C {
        // Fold the load back towards the source one segment at a time.
        let mut z: Option<C> = self.load.equivalent_impedance_ohm().map(|r| C::new(r, 0.0));
        for seg in self.segments.iter().rev() {
            z = self.segment_abcd(seg, freq_hz).input_impedance(z);
        }
        let z_ref = C::new(self.reference_ohm, 0.0);
        match z {
            None => C::new(1.0, 0.0),
            Some(z) => (z - z_ref) / (z + z_ref),
        }
    }
}

fn check_grid(freq_grid: &[f64]) -> Result<()> {
    if freq_grid.is_empty() {
        return Err(invalid("frequency grid is empty"));
    }
    if freq_grid.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(invalid("frequency grid must be finite and non-negative"));
    }
    if freq_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("frequency grid must be strictly increasing"));
    }
    Ok(())
}

pub fn input_reflection_response(model: &TwoPortModel, freq_grid: &[f64]) -> Result<Vec<C>> {
    check_grid(freq_grid)?;
    Ok(freq_grid.iter().map(|&f| model.gamma_at(f)).collect())
}

pub fn transmission_response(model: &TwoPortModel, freq_grid: &[f64]) -> Result<Vec<C>> {
    check_grid(freq_grid)?;
    Ok(freq_grid.iter().map(|&f| model.s_matrix(f).s21).collect())
}

pub fn s_parameters(model: &TwoPortModel, freq_grid: &[f64]) -> Result<Vec<SMatrix>> {
    check_grid(freq_grid)?;
    Ok(freq_grid.iter().map(|&f| model.s_matrix(f)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub freq_grid_hz: Vec<f64>,
    pub gamma_in: Vec<C>,
    pub h_fwd: Vec<C>,
    pub noise_seed: u64,
}

pub fn realize(model: &TwoPortModel, freq_grid: &[f64], noise_seed: u64) -> Result<ChannelRealization> {
    Ok(ChannelRealization {
        freq_grid_hz: freq_grid.to_vec(),
        gamma_in: input_reflection_response(model, freq_grid)?,
        h_fwd: transmission_response(model, freq_grid)?,
        noise_seed,
    })
}

/// Bins `0..=n/2` of an `n`-point DFT at `sample_rate_hz`.
pub fn dft_grid(sample_rate_hz: f64, n: usize) -> Vec<f64> {
    (0..=n / 2).map(|k| k as f64 * sample_rate_hz / n as f64).collect()
}

fn ir_taper(k: usize, half: usize) -> f64 {
    let x = k as f64 / half as f64;
    if x <= IR_TAPER_START {
        1.0
    } else {
        let u = (x - IR_TAPER_START) / (1.0 - IR_TAPER_START);
        0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

fn check_dft_grid(realization: &ChannelRealization, sample_rate_hz: f64, n: usize) -> Result<()> {
    let grid = &realization.freq_grid_hz;
    if n < 2 || !n.is_multiple_of(2) {
        return Err(invalid(format!("waveform length {n} must be even and >= 2")));
    }
    if grid.len() != n / 2 + 1 || realization.gamma_in.len() != grid.len() {
        return Err(invalid(format!(
            "realization has {} bins; a {n}-sample waveform needs {}",
            grid.len(),
            n / 2 + 1
        )));
    }
    let df = sample_rate_hz / n as f64;
    let off = grid
        .iter()
        .enumerate()
        .any(|(k, f)| (f - k as f64 * df).abs() > 1e-6 * df.max(1.0));
    if off {
        return Err(invalid("realization grid does not match the waveform's DFT bins"));
    }
    Ok(())
}

/// Periodic impulse response of `gamma_in` (length `2 * (bins - 1)`), after
/// a half-Hann roll-off of the top quarter of the band.
pub fn impulse_response(realization: &ChannelRealization, sample_rate_hz: f64) -> Result<Vec<f64>> {
    let n = 2 * realization.freq_grid_hz.len().saturating_sub(1);
    check_dft_grid(realization, sample_rate_hz, n)?;
    let half = n / 2;
    let mut spec = vec![C::new(0.0, 0.0); n];
    for k in 0..=half {
        let v = realization.gamma_in[k] * ir_taper(k, half);
        if k == 0 || k == half {
            spec[k] = C::new(v.re, 0.0);
        } else {
            spec[k] = v;
            spec[n - k] = v.conj();
        }
    }
    Ok(dsp::ifft(&spec).into_iter().map(|c| c.re).collect())
}

/// Noise-free echo: the periodic probe circularly convolved with the
/// reflection impulse response.
pub fn synthesize_echo_clean(probe: &Waveform, realization: &ChannelRealization) -> Result<Waveform> {
    let h = impulse_response(realization, probe.sample_rate_hz)?;
    if h.len() != probe.len() {
        return Err(invalid("probe length does not match the realization grid"));
    }
    let p = dsp::fft_real(&probe.samples);
    let hf = dsp::fft_real(&h);
    let prod: Vec<C> = p.iter().zip(&hf).map(|(a, b)| a * b).collect();
    let samples = dsp::ifft(&prod).into_iter().map(|c| c.re).collect();
    Ok(Waveform::new(probe.sample_rate_hz, samples))
}

/// Noise standard deviation giving `snr_db` relative to the probe power.
pub fn noise_sigma(probe: &Waveform, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(invalid(format!("snr_db {snr_db} is not finite")));
    }
    Ok((probe.power() / 10f64.powf(snr_db / 10.0)).sqrt())
}

pub fn add_white_noise(samples: &mut [f64], sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for s in samples {
        *s += normal.sample(&mut rng);
    }
}

pub fn synthesize_echo(
    probe: &Waveform,
    realization: &ChannelRealization,
    snr_db: f64,
    seed: u64,
) -> Result<Waveform> {
    let sigma = noise_sigma(probe, snr_db)?;
    let mut echo = synthesize_echo_clean(probe, realization)?;
    add_white_noise(&mut echo.samples, sigma, seed);
    Ok(echo)
}

/// What the reflectometer receiver records: the probe leaking straight
/// through the coupler (`direct_coupling` times the probe) plus the line
/// echo and receiver noise.
pub fn synthesize_capture(
    probe: &Waveform,
    realization: &ChannelRealization,
    direct_coupling: f64,
    snr_db: f64,
    seed: u64,
) -> Result<Waveform> {
    let mut echo = synthesize_echo(probe, realization, snr_db, seed)?;
    for (e, p) in echo.samples.iter_mut().zip(&probe.samples) {
        *e += direct_coupling * p;
    }
    Ok(echo)
}

/// Per-carrier SNR seen by a receiver at the far end:
/// `10 log10(tx_psd |h|^2 / noise_psd)`.
pub fn synthesize_snr_trace(realization: &ChannelRealization, tx_psd: f64, noise_psd: f64) -> Result<SnrTrace> {
    if !(tx_psd.is_finite() && tx_psd > 0.0 && noise_psd.is_finite() && noise_psd > 0.0) {
        return Err(invalid("PSD values must be finite and positive"));
    }
    check_grid(&realization.freq_grid_hz)?;
    let snr_db = realization
        .h_fwd
        .iter()
        .map(|h| 10.0 * (tx_psd * h.norm_sqr() / noise_psd).max(1e-30).log10())
        .collect();
    Ok(SnrTrace {
        carrier_grid_hz: realization.freq_grid_hz.clone(),
        snr_db,
        end: LineEnd::Far,
        instant_id: 0,
        load_w: None,
    })
}
