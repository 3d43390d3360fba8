//! PLC-modem SNR analyzer: per-carrier traces, the mean-SNR summary and its
//! three-band verdict.
//!
//! CSV layout (one row per carrier, any column order):
//!
//! ```text
//! carrier_hz,snr_db,end,instant,load_w
//! 2000000,31.2,far,0,200
//! ```
//!
//! `end` is `near` or `far`; `load_w` may be left empty when unknown.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, parse_err, Error, Result};
use crate::threshold::{derive_deviation_thresholds, HealthyReference, Placement, ThresholdPair, Verdict};

pub const DEFAULT_CARRIER_START_HZ: f64 = 2.0e6;
pub const DEFAULT_CARRIER_STOP_HZ: f64 = 28.0e6;
pub const DEFAULT_CARRIER_COUNT: usize = 917;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineEnd {
    Near,
    Far,
}

impl LineEnd {
    pub fn as_str(self) -> &'static str {
        match self {
            LineEnd::Near => "near",
            LineEnd::Far => "far",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrTrace {
    pub carrier_grid_hz: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub end: LineEnd,
    pub instant_id: u64,
    pub load_w: Option<f64>,
}

impl SnrTrace {
    pub fn validate(&self) -> Result<()> {
        if self.carrier_grid_hz.is_empty() {
            return Err(invalid("SNR trace has no carriers"));
        }
        if self.carrier_grid_hz.len() != self.snr_db.len() {
            return Err(invalid("SNR trace grid and values differ in length"));
        }
        if self.carrier_grid_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("carrier grid must be strictly increasing"));
        }
        if self.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(invalid("SNR values must be finite"));
        }
        Ok(())
    }
}

/// Uniform PLC carrier grid, both ends inclusive.
pub fn carrier_grid(start_hz: f64, stop_hz: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start_hz];
    }
    let step = (stop_hz - start_hz) / (count - 1) as f64;
    (0..count).map(|i| start_hz + step * i as f64).collect()
}

const COLUMNS: [&str; 5] = ["carrier_hz", "snr_db", "end", "instant", "load_w"];

pub fn parse_snr_csv<R: Read>(input: R) -> Result<Vec<SnrTrace>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))?;
    }

    let mut groups: BTreeMap<(u64, LineEnd), SnrTrace> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("`{}` is not numeric: {:?}", COLUMNS[i], field(i))))
        };
        let carrier = num(0)?;
        let snr = num(1)?;
        let end = match field(2).to_ascii_lowercase().as_str() {
            "near" => LineEnd::Near,
            "far" => LineEnd::Far,
            other => return Err(parse_err(line, format!("`end` must be near or far, got {other:?}"))),
        };
        let instant: u64 = field(3)
            .parse()
            .map_err(|_| parse_err(line, format!("`instant` is not an integer: {:?}", field(3))))?;
        let load_w = if field(4).is_empty() { None } else { Some(num(4)?) };

        let trace = groups.entry((instant, end)).or_insert_with(|| SnrTrace {
            carrier_grid_hz: Vec::new(),
            snr_db: Vec::new(),
            end,
            instant_id: instant,
            load_w,
        });
        if trace.load_w != load_w {
            return Err(parse_err(line, "load_w changes within one trace"));
        }
        if trace.carrier_grid_hz.last().is_some_and(|&last| carrier <= last) {
            return Err(parse_err(line, "carrier frequencies must increase within a trace"));
        }
        if !snr.is_finite() {
            return Err(parse_err(line, "snr_db must be finite"));
        }
        trace.carrier_grid_hz.push(carrier);
        trace.snr_db.push(snr);
    }
    Ok(groups.into_values().collect())
}

pub fn write_snr_csv<W: Write>(out: W, traces: &[SnrTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(COLUMNS).map_err(io)?;
    for t in traces {
        let load = t.load_w.map(|l| l.to_string()).unwrap_or_default();
        for (f, s) in t.carrier_grid_hz.iter().zip(&t.snr_db) {
            w.write_record([
                f.to_string(),
                s.to_string(),
                t.end.as_str().to_string(),
                t.instant_id.to_string(),
                load.clone(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    /// Mean SNR over carriers, dB.
    pub psi2: f64,
    /// Healthy reference minus `psi2`.
    pub deviation: f64,
}

pub fn mean_snr_db(trace: &SnrTrace) -> Result<f64> {
    trace.validate()?;
    Ok(trace.snr_db.iter().sum::<f64>() / trace.snr_db.len() as f64)
}

pub fn summarize_snr(trace: &SnrTrace, reference: &HealthyReference) -> Result<SnrSummary> {
    let psi2 = mean_snr_db(trace)?;
    Ok(SnrSummary {
        psi2,
        deviation: reference.deviation(psi2, trace.load_w),
    })
}

/// Midpoint thresholds on `healthy mean psi2 - psi2`, from per-class psi2
/// values ordered `(H, F_s, F_l)`.
pub fn derive_snr_thresholds(psi2_by_class: &[Vec<f64>; 3]) -> Result<ThresholdPair> {
    derive_deviation_thresholds(psi2_by_class, Placement::MIDPOINT)
}

pub fn classify_snr(summary: &SnrSummary, th: &ThresholdPair) -> Verdict {
    Verdict::from_deviation(summary.deviation, th)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::CableState;
    use proptest::prelude::*;

    fn trace(values: &[f64]) -> SnrTrace {
        SnrTrace {
            carrier_grid_hz: (0..values.len()).map(|i| 2e6 + i as f64 * 1e5).collect(),
            snr_db: values.to_vec(),
            end: LineEnd::Far,
            instant_id: 0,
            load_w: None,
        }
    }

    #[test]
    fn parse_single_and_both_ends() {
        let one = "carrier_hz,snr_db,end,instant,load_w\n2000000,10,far,0,200\n2100000,30,far,0,200\n";
        let t = parse_snr_csv(one.as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].snr_db.len(), 2);
        assert_eq!(t[0].load_w, Some(200.0));

        let both = "instant,end,carrier_hz,snr_db,load_w\n0,near,2e6,10,\n0,far,2e6,11,\n0,near,3e6,12,\n";
        let t = parse_snr_csv(both.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].end, LineEnd::Near);
        assert_eq!(t[0].snr_db, vec![10.0, 12.0]);
        assert_eq!(t[1].load_w, None);
    }

    #[test]
    fn parse_errors_name_rows() {
        let missing = "carrier_hz,snr_db,end,instant\n2e6,1,far,0\n";
        assert!(matches!(parse_snr_csv(missing.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let bad = "carrier_hz,snr_db,end,instant,load_w\n2e6,1,far,0,\n3e6,x,far,0,\n";
        assert!(matches!(parse_snr_csv(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let wrong_end = "carrier_hz,snr_db,end,instant,load_w\n2e6,1,middle,0,\n";
        assert!(matches!(parse_snr_csv(wrong_end.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn mean_summary() {
        let zero = HealthyReference::constant(20.0);
        let s = summarize_snr(&trace(&[20.0; 8]), &zero).unwrap();
        assert_eq!(s.psi2, 20.0);
        assert_eq!(s.deviation, 0.0);
        assert_eq!(summarize_snr(&trace(&[10.0, 30.0]), &zero).unwrap().psi2, 20.0);
        assert!(summarize_snr(&trace(&[]), &zero).is_err());
    }

    #[test]
    fn midpoint_snr_thresholds() {
        let th = derive_snr_thresholds(&[vec![30.0], vec![27.0], vec![21.0]]).unwrap();
        assert_eq!(th.th_s, 1.5);
        assert_eq!(th.th_l, 6.0);
        let spread = derive_snr_thresholds(&[vec![29.0, 31.0], vec![27.0], vec![20.0, 22.0]]).unwrap();
        assert_eq!((spread.th_s, spread.th_l), (1.5, 6.0));
    }

    #[test]
    fn snr_verdict_bands() {
        let th = ThresholdPair::new(1.5, 6.0).unwrap();
        let v = |d: f64| classify_snr(&SnrSummary { psi2: 0.0, deviation: d }, &th);
        assert_eq!(v(0.0).state, CableState::Healthy);
        assert!(!v(0.0).flag);
        assert_eq!(v(7.0).state, CableState::LargeFault);
        assert!(v(7.0).flag);
        assert_eq!(v(3.0).state, CableState::SmallFault);
        assert!(!v(3.0).flag);
        assert_eq!(v(1.5).state, CableState::SmallFault);
    }

    proptest! {
        #[test]
        fn mean_shift_equivariance(values in prop::collection::vec(-20.0f64..60.0, 1..50), c in -30.0f64..30.0) {
            let r = HealthyReference::constant(0.0);
            let base = summarize_snr(&trace(&values), &r).unwrap().psi2;
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let moved = summarize_snr(&trace(&shifted), &r).unwrap().psi2;
            prop_assert!((moved - base - c).abs() < 1e-9);
        }
    }
}
