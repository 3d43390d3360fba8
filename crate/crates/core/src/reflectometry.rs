//! OMTDR: multitone probe, correlation into a reflectogram, baseline-aware
//! peak detection, localization and the correlation-peak verdict.
//!
//! The probe is one cyclic OFDM symbol of `n_tones * oversampling` samples
//! at the effective rate. Tone `j` sits on DFT bin
//! `center_bin + tone_step * (j - n_tones / 2)`, so tones are exactly
//! orthogonal over the symbol and masked tones carry no energy at all.
//!
//! Correlation is evaluated on the analytic (positive-frequency) signal over
//! the tone bins only, which gives a smooth envelope whose peak for a pure
//! delayed copy equals the copy's amplitude. The tone comb spacing makes the
//! correlation periodic in lag, so only an unambiguous window of
//! `symbol_len / tone_step` lags (starting `guard_samples` before lag 0) is
//! kept.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::SPEED_OF_LIGHT_M_PER_S;
use crate::dsp;
use crate::error::{invalid, Error, Result};
use crate::threshold::{ThresholdPair, Verdict};
use crate::waveform::{self, ColumnHeader, Waveform};

type C = Complex64;

/// Weighting applied across the tone comb before the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    Rectangular,
    #[default]
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultitoneConfig {
    pub center_freq_hz: f64,
    pub sample_rate_hz: f64,
    pub oversampling: u32,
    pub n_tones: usize,
    /// Tone spacing in DFT bins of the symbol.
    pub tone_step: usize,
    pub active_tone_mask: Vec<bool>,
    pub seed: u64,
    #[serde(default)]
    pub taper: Taper,
    #[serde(default = "default_guard")]
    pub guard_samples: usize,
}

fn default_guard() -> usize {
    16
}

impl Default for MultitoneConfig {
    fn default() -> Self {
        Self {
            center_freq_hz: 3.0e7,
            sample_rate_hz: 5.0e6,
            oversampling: 32,
            n_tones: 64,
            tone_step: 10,
            active_tone_mask: vec![true; 64],
            seed: 0,
            taper: Taper::Hann,
            guard_samples: default_guard(),
        }
    }
}

impl MultitoneConfig {
    pub fn effective_rate_hz(&self) -> f64 {
        self.sample_rate_hz * self.oversampling as f64
    }

    pub fn symbol_len(&self) -> usize {
        self.n_tones * self.oversampling as usize
    }

    fn center_bin(&self) -> usize {
        (self.center_freq_hz * self.symbol_len() as f64 / self.effective_rate_hz()).round() as usize
    }

    /// DFT bin of every tone, active or not.
    pub fn tone_bins(&self) -> Vec<usize> {
        let c = self.center_bin() as isize;
        let half = (self.n_tones / 2) as isize;
        (0..self.n_tones as isize)
            .map(|j| (c + self.tone_step as isize * (j - half)) as usize)
            .collect()
    }

    pub fn tone_frequencies_hz(&self) -> Vec<f64> {
        let df = self.effective_rate_hz() / self.symbol_len() as f64;
        self.tone_bins().into_iter().map(|k| k as f64 * df).collect()
    }

    /// Number of lags kept in a reflectogram.
    pub fn window_len(&self) -> usize {
        self.symbol_len() / self.tone_step.max(1)
    }

    /// Mask with tones inside `[lo_hz, hi_hz]` switched off.
    pub fn with_band_masked(mut self, lo_hz: f64, hi_hz: f64) -> Self {
        let freqs = self.tone_frequencies_hz();
        for (m, f) in self.active_tone_mask.iter_mut().zip(freqs) {
            if f >= lo_hz && f <= hi_hz {
                *m = false;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(invalid("sample rate must be > 0"));
        }
        if self.oversampling == 0 {
            return Err(invalid("oversampling must be >= 1"));
        }
        if self.n_tones < 2 {
            return Err(invalid("at least two tones are required"));
        }
        if self.tone_step == 0 {
            return Err(invalid("tone_step must be >= 1"));
        }
        if self.active_tone_mask.len() != self.n_tones {
            return Err(invalid(format!(
                "active_tone_mask has {} entries for {} tones",
                self.active_tone_mask.len(),
                self.n_tones
            )));
        }
        if !self.active_tone_mask.iter().any(|&a| a) {
            return Err(invalid("active_tone_mask switches every tone off"));
        }
        let n = self.symbol_len();
        let exact = self.center_freq_hz * n as f64 / self.effective_rate_hz();
        if (exact - exact.round()).abs() > 1e-6 {
            return Err(invalid("center frequency does not fall on a DFT bin of the symbol"));
        }
        let c = self.center_bin() as isize;
        let half = (self.n_tones / 2) as isize;
        let lo = c - self.tone_step as isize * half;
        let hi = c + self.tone_step as isize * (self.n_tones as isize - 1 - half);
        if lo <= 0 || hi >= (n / 2) as isize {
            return Err(invalid("tone comb does not fit strictly between DC and Nyquist"));
        }
        if self.guard_samples >= self.window_len() {
            return Err(invalid("guard_samples must be shorter than the lag window"));
        }
        Ok(())
    }

    fn taper_weights(&self) -> Vec<f64> {
        let n = self.n_tones as f64;
        (0..self.n_tones)
            .map(|j| match self.taper {
                Taper::Rectangular => 1.0,
                // Shifted half a tone so the end tones keep a little weight.
                Taper::Hann => 0.5 - 0.5 * (2.0 * PI * (j as f64 + 0.5) / n).cos(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub config: MultitoneConfig,
    pub waveform: Waveform,
}

/// One unit-RMS cyclic symbol carrying every active tone with a seeded phase.
pub fn generate_probe(config: &MultitoneConfig) -> Result<Probe> {
    config.validate()?;
    let n = config.symbol_len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut spec = vec![C::new(0.0, 0.0); n];
    for (&k, &active) in config.tone_bins().iter().zip(&config.active_tone_mask) {
        // Draw for every tone so the mask does not reshuffle the active phases.
        let phase = rng.random::<f64>() * 2.0 * PI;
        if active {
            spec[k] = C::from_polar(1.0, phase);
            spec[n - k] = spec[k].conj();
        }
    }
    let mut samples: Vec<f64> = dsp::ifft(&spec).into_iter().map(|c| c.re).collect();
    let scale = 1.0 / dsp::rms(&samples);
    for s in &mut samples {
        *s *= scale;
    }
    Ok(Probe {
        config: config.clone(),
        waveform: Waveform::new(config.effective_rate_hz(), samples),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflectogram {
    /// Correlation magnitude; index `i` is lag `i - zero_lag_index`.
    pub values: Vec<f64>,
    /// Complex correlation behind `values`, when produced by [`correlate`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<C>>,
    pub tx_peak_index: usize,
    pub zero_lag_index: usize,
    pub meters_per_sample: f64,
    pub config: MultitoneConfig,
}

impl Reflectogram {
    /// Reflectogram from stored magnitudes (no complex trace).
    pub fn from_magnitudes(values: Vec<f64>, config: MultitoneConfig, velocity_factor: f64) -> Result<Self> {
        config.validate()?;
        check_velocity_factor(velocity_factor)?;
        if values.is_empty() {
            return Err(invalid("reflectogram is empty"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("reflectogram magnitudes must be finite and non-negative"));
        }
        Ok(Self {
            tx_peak_index: tx_peak(&values),
            zero_lag_index: config.guard_samples.min(values.len() - 1),
            meters_per_sample: meters_per_sample(&config, velocity_factor),
            trace: None,
            values,
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Distance of every sample from the TX peak (negative before it).
    pub fn distances_m(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|i| (i as f64 - self.tx_peak_index as f64) * self.meters_per_sample)
            .collect()
    }

    pub fn velocity_factor(&self) -> f64 {
        2.0 * self.meters_per_sample * self.config.effective_rate_hz() / SPEED_OF_LIGHT_M_PER_S
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        waveform::write_column_csv(out, &self.values)
    }

    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        waveform::write_column_binary(out, self.column_header(), &self.values)
    }

    pub fn read_csv<R: Read>(input: R, config: MultitoneConfig, velocity_factor: f64) -> Result<Self> {
        Self::from_magnitudes(waveform::read_column_csv(input)?, config, velocity_factor)
    }

    /// Reads a binary column; the header must match `config`'s rates.
    pub fn read_binary<R: Read>(input: R, config: MultitoneConfig, velocity_factor: f64) -> Result<Self> {
        let (h, values) = waveform::read_column_binary(input)?;
        if h.oversampling != config.oversampling || (h.sample_rate_hz - config.effective_rate_hz()).abs() > 1e-6 {
            return Err(invalid(format!(
                "reflectogram header ({} Hz, x{}) does not match the probe configuration",
                h.sample_rate_hz, h.oversampling
            )));
        }
        Self::from_magnitudes(values, config, velocity_factor)
    }

    fn column_header(&self) -> ColumnHeader {
        ColumnHeader {
            sample_rate_hz: self.config.effective_rate_hz(),
            oversampling: self.config.oversampling,
        }
    }
}

fn check_velocity_factor(vf: f64) -> Result<()> {
    if !(vf > 0.0 && vf < 1.0) {
        return Err(invalid(format!("velocity factor {vf} must lie in (0, 1)")));
    }
    Ok(())
}

pub fn meters_per_sample(config: &MultitoneConfig, velocity_factor: f64) -> f64 {
    velocity_factor * SPEED_OF_LIGHT_M_PER_S / (2.0 * config.effective_rate_hz())
}

/// First local maximum reaching half the global maximum.
fn tx_peak(values: &[f64]) -> usize {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let n = values.len();
    (0..n)
        .find(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { values[i - 1] };
            let right = if i + 1 == n { f64::NEG_INFINITY } else { values[i + 1] };
            values[i] >= 0.5 * max && values[i] > left && values[i] >= right
        })
        .unwrap_or(0)
}

/// Averages a capture of whole symbols down to one symbol.
fn fold_symbols(echo: &[f64], n: usize) -> Result<Vec<f64>> {
    if echo.is_empty() || !echo.len().is_multiple_of(n) {
        return Err(invalid(format!(
            "echo length {} is not a whole number of {n}-sample symbols",
            echo.len()
        )));
    }
    let k = echo.len() / n;
    let mut out = vec![0.0; n];
    for chunk in echo.chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= k as f64;
    }
    Ok(out)
}

/// Normalized cross-correlation of `echo` against the probe.
///
/// `echo` may span several symbols; they are averaged first.
pub fn correlate(probe: &Probe, echo: &Waveform, velocity_factor: f64) -> Result<Reflectogram> {
    let cfg = &probe.config;
    check_velocity_factor(velocity_factor)?;
    if (probe.waveform.sample_rate_hz - echo.sample_rate_hz).abs() > 1e-9 * echo.sample_rate_hz {
        return Err(invalid("probe and echo sample rates differ"));
    }
    let n = cfg.symbol_len();
    if probe.waveform.len() != n {
        return Err(invalid("probe is not one symbol long"));
    }
    let folded = fold_symbols(&echo.samples, n)?;

    let p = dsp::fft_real(&probe.waveform.samples);
    let e = dsp::fft_real(&folded);
    let bins = cfg.tone_bins();
    let weights = cfg.taper_weights();
    let mut cross = Vec::new();
    let mut norm = 0.0;
    for ((&k, &w), &active) in bins.iter().zip(&weights).zip(&cfg.active_tone_mask) {
        if active {
            cross.push((k, w * e[k] * p[k].conj()));
            norm += w * p[k].norm_sqr();
        }
    }

    let len = cfg.window_len();
    let guard = cfg.guard_samples as isize;
    let trace: Vec<C> = (0..len as isize)
        .map(|i| {
            let lag = (i - guard) as f64;
            let acc: C = cross
                .iter()
                .map(|&(k, v)| v * C::from_polar(1.0, 2.0 * PI * k as f64 * lag / n as f64))
                .sum();
            acc / norm
        })
        .collect();
    let values: Vec<f64> = trace.iter().map(|c| c.norm()).collect();

    Ok(Reflectogram {
        tx_peak_index: tx_peak(&values),
        zero_lag_index: cfg.guard_samples,
        meters_per_sample: meters_per_sample(cfg, velocity_factor),
        trace: Some(trace),
        values,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub sample_index: usize,
    pub refined_index: f64,
    pub magnitude: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
    pub end_of_line_index: Option<usize>,
}

impl PeakSet {
    /// Largest peak magnitude, 0 when empty.
    pub fn psi3(&self) -> f64 {
        self.peaks.iter().map(|p| p.magnitude).fold(0.0, f64::max)
    }

    pub fn end_of_line_distance_m(&self, r: &Reflectogram) -> Option<f64> {
        self.end_of_line_index
            .map(|i| (i as f64 - r.tx_peak_index as f64) * r.meters_per_sample)
    }
}

/// Vertex offset of the parabola through three samples, kept within ±1.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
}

fn refine(values: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= values.len() {
        return i as f64;
    }
    i as f64 + parabolic_offset(values[i - 1], values[i], values[i + 1])
}

fn local_maxima(values: &[f64], threshold: f64) -> Vec<usize> {
    let n = values.len();
    (0..n)
        .filter(|&i| {
            let left = if i == 0 { 0.0 } else { values[i - 1] };
            let right = if i + 1 == n { 0.0 } else { values[i + 1] };
            values[i] > threshold && values[i] > left && values[i] >= right
        })
        .collect()
}

/// End of the TX main lobe: first local minimum after the TX peak.
fn main_lobe_end(values: &[f64], tx: usize) -> usize {
    let mut i = tx;
    while i + 1 < values.len() && values[i + 1] <= values[i] {
        i += 1;
    }
    i
}

/// Last peak beyond the TX main lobe reaching half the largest such peak.
fn end_of_line(values: &[f64], tx: usize) -> Option<usize> {
    let start = main_lobe_end(values, tx);
    let tail = &values[start..];
    let max = tail.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    local_maxima(tail, 0.5 * max * (1.0 - 1e-12))
        .last()
        .map(|&i| i + start)
}

/// Peaks of `r` (or of its difference from `baseline`) above `threshold`.
///
/// With a baseline carrying a complex trace the difference is taken
/// coherently, `|r - b|`, so a fault echo overlapping the end-of-line echo
/// still stands out; magnitude-only inputs use `max(r - b, 0)`.
pub fn detect_peaks(r: &Reflectogram, baseline: Option<&Reflectogram>, threshold: f64) -> Result<PeakSet> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(invalid(format!("peak threshold {threshold} must be > 0")));
    }
    let (residual, end_of_line_index) = match baseline {
        None => (r.values.clone(), end_of_line(&r.values, r.tx_peak_index)),
        Some(b) => {
            if b.config != r.config || b.values.len() != r.values.len() || b.zero_lag_index != r.zero_lag_index {
                return Err(invalid("baseline does not share the reflectogram's configuration and length"));
            }
            let residual = match (&r.trace, &b.trace) {
                (Some(rt), Some(bt)) => rt.iter().zip(bt).map(|(x, y)| (x - y).norm()).collect(),
                _ => r.values.iter().zip(&b.values).map(|(x, y)| (x - y).max(0.0)).collect(),
            };
            (residual, end_of_line(&b.values, b.tx_peak_index))
        }
    };

    let tx = r.tx_peak_index as f64;
    let peaks = local_maxima(&residual, threshold)
        .into_iter()
        .filter_map(|i| {
            // The TX sample is the distance origin by definition.
            let refined = if i == r.tx_peak_index { tx } else { refine(&residual, i) };
            (refined >= tx).then(|| Peak {
                sample_index: i,
                refined_index: refined,
                magnitude: residual[i],
                distance_m: (refined - tx) * r.meters_per_sample,
            })
        })
        .collect();
    Ok(PeakSet {
        peaks,
        end_of_line_index,
    })
}

pub fn localize(p: &Peak, r: &Reflectogram) -> Result<f64> {
    let tx = r.tx_peak_index as f64;
    if p.refined_index < tx {
        return Err(Error::Inconsistent(format!(
            "peak at {} precedes the TX peak at {tx}",
            p.refined_index
        )));
    }
    Ok((p.refined_index - tx) * r.meters_per_sample)
}

/// Velocity factor that places the baseline's end-of-line echo at
/// `known_length_m`.
pub fn calibrate_velocity_factor(baseline: &Reflectogram, known_length_m: f64) -> Result<f64> {
    if !(known_length_m.is_finite() && known_length_m > 0.0) {
        return Err(invalid("known cable length must be > 0"));
    }
    let eol = end_of_line(&baseline.values, baseline.tx_peak_index)
        .ok_or_else(|| Error::Calibration("baseline has no end-of-line echo".into()))?;
    let lag = refine(&baseline.values, eol) - refine(&baseline.values, baseline.tx_peak_index);
    if lag <= 0.0 {
        return Err(Error::Calibration("end-of-line echo does not follow the TX peak".into()));
    }
    let vf = 2.0 * known_length_m * baseline.config.effective_rate_hz() / (SPEED_OF_LIGHT_M_PER_S * lag);
    if !(vf > 0.0 && vf < 1.0) {
        return Err(Error::Calibration(format!("calibrated velocity factor {vf} is not physical")));
    }
    Ok(vf)
}

/// Verdict on the largest fault-peak magnitude.
pub fn classify_omtdr(peaks: &PeakSet, th: &ThresholdPair) -> Verdict {
    Verdict::from_deviation(peaks.psi3(), th)
}
