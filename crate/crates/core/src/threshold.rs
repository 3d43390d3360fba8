//! Deviation scores and the three-band threshold rule shared by all methods.
//!
//! Every method's evidence is mapped to a deviation score where larger means
//! worse. A score below `th_s` is healthy, `[th_s, th_l)` is a small fault
//! and anything at or above `th_l` is a large fault.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::state::CableState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub th_s: f64,
    pub th_l: f64,
}

impl ThresholdPair {
    pub fn new(th_s: f64, th_l: f64) -> Result<Self> {
        let t = Self { th_s, th_l };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.th_s.is_finite() && self.th_l.is_finite() && 0.0 < self.th_s && self.th_s < self.th_l) {
            return Err(invalid(format!(
                "thresholds must satisfy 0 < th_s < th_l (got th_s={}, th_l={})",
                self.th_s, self.th_l
            )));
        }
        Ok(())
    }

    pub fn classify(&self, deviation: f64) -> CableState {
        if deviation >= self.th_l {
            CableState::LargeFault
        } else if deviation >= self.th_s {
            CableState::SmallFault
        } else {
            CableState::Healthy
        }
    }
}

/// Where a threshold sits between two adjacent class means, as a fraction
/// of the gap measured from the less severe class. 0.5 is the midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement(pub f64);

impl Placement {
    pub const MIDPOINT: Placement = Placement(0.5);

    pub fn validate(&self) -> Result<()> {
        if !(self.0 > 0.0 && self.0 < 1.0) {
            return Err(invalid(format!("threshold placement {} must lie in (0, 1)", self.0)));
        }
        Ok(())
    }
}

impl Default for Placement {
    fn default() -> Self {
        Self::MIDPOINT
    }
}

/// Outcome of classifying one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub state: CableState,
    /// Binary indicator Y: 1 only for a large-fault verdict.
    pub flag: bool,
    pub deviation: f64,
}

impl Verdict {
    pub fn from_deviation(deviation: f64, th: &ThresholdPair) -> Self {
        let state = th.classify(deviation);
        Self {
            state,
            flag: state == CableState::LargeFault,
            deviation,
        }
    }
}

pub fn class_means(by_class: &[Vec<f64>; 3]) -> Result<[f64; 3]> {
    let mut means = [0.0; 3];
    for (i, values) in by_class.iter().enumerate() {
        if values.is_empty() {
            return Err(Error::Calibration(format!(
                "no calibration values for {}",
                CableState::ALL[i]
            )));
        }
        means[i] = values.iter().sum::<f64>() / values.len() as f64;
    }
    Ok(means)
}

/// Thresholds between class-mean deviations `(H, F_s, F_l)`.
pub fn thresholds_from_class_means(means: [f64; 3], placement: Placement) -> Result<ThresholdPair> {
    placement.validate()?;
    if !(means[0] < means[1] && means[1] < means[2]) {
        return Err(Error::Calibration(format!(
            "class mean deviations are not ordered H < F_s < F_l: {means:?}"
        )));
    }
    let p = placement.0;
    let th = ThresholdPair {
        th_s: means[0] + p * (means[1] - means[0]),
        th_l: means[1] + p * (means[2] - means[1]),
    };
    th.validate().map_err(|e| Error::Calibration(e.to_string()))?;
    Ok(th)
}

/// Thresholds for a summary where a healthy cable scores high (mean CFR,
/// mean SNR). Scores are mapped to `healthy_mean - value` first.
pub fn derive_deviation_thresholds(by_class: &[Vec<f64>; 3], placement: Placement) -> Result<ThresholdPair> {
    let means = class_means(by_class)?;
    let healthy = means[0];
    thresholds_from_class_means(means.map(|m| healthy - m), placement)
}

/// Load level key used to stratify healthy references (watts, rounded).
pub fn load_key(load_w: f64) -> u32 {
    load_w.round().max(0.0) as u32
}

/// Healthy-cable value of a summary, optionally per load level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HealthyReference {
    pub pooled: f64,
    #[serde(default)]
    pub by_load: BTreeMap<u32, f64>,
}

impl HealthyReference {
    pub fn constant(value: f64) -> Self {
        Self {
            pooled: value,
            by_load: BTreeMap::new(),
        }
    }

    /// Means of `(load_w, value)` pairs, pooled and per load level.
    pub fn from_samples(samples: &[(Option<f64>, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Calibration("no healthy samples for the reference".into()));
        }
        let pooled = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
        let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for (load, v) in samples {
            if let Some(l) = load {
                let e = acc.entry(load_key(*l)).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        let by_load = acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
        Ok(Self { pooled, by_load })
    }

    pub fn value_for(&self, load_w: Option<f64>) -> f64 {
        load_w
            .and_then(|l| self.by_load.get(&load_key(l)).copied())
            .unwrap_or(self.pooled)
    }

    pub fn deviation(&self, value: f64, load_w: Option<f64>) -> f64 {
        self.value_for(load_w) - value
    }
}
