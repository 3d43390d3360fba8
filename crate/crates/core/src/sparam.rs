//! Two-port S-parameter analyzer: Touchstone I/O, channel frequency
//! response, averaging over instants and the CFR verdict.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::SMatrix;
use crate::error::{invalid, parse_err, Result};
use crate::threshold::{derive_deviation_thresholds, HealthyReference, Placement, ThresholdPair, Verdict};

type C = Complex64;

/// Default number of instants averaged per CFR.
pub const DEFAULT_AVERAGE_INSTANTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SParamRecord {
    pub freq_grid_hz: Vec<f64>,
    pub s11: Vec<C>,
    pub s21: Vec<C>,
    pub s12: Vec<C>,
    pub s22: Vec<C>,
    pub reference_ohm: f64,
    pub instant_id: u64,
    pub load_w: Option<f64>,
}

impl SParamRecord {
    pub fn from_matrices(freq_grid_hz: &[f64], m: &[SMatrix], reference_ohm: f64) -> Self {
        Self {
            freq_grid_hz: freq_grid_hz.to_vec(),
            s11: m.iter().map(|x| x.s11).collect(),
            s21: m.iter().map(|x| x.s21).collect(),
            s12: m.iter().map(|x| x.s12).collect(),
            s22: m.iter().map(|x| x.s22).collect(),
            reference_ohm,
            instant_id: 0,
            load_w: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.freq_grid_hz.len();
        if n == 0 {
            return Err(invalid("S-parameter record has no frequency points"));
        }
        if [&self.s11, &self.s21, &self.s12, &self.s22].iter().any(|v| v.len() != n) {
            return Err(invalid("S-parameters do not share the frequency grid"));
        }
        if self.freq_grid_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("frequency grid must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataFormat {
    /// Real / imaginary.
    Ri,
    /// Linear magnitude / angle in degrees.
    Ma,
    /// Magnitude in dB / angle in degrees.
    Db,
}

fn decode(fmt: DataFormat, a: f64, b: f64) -> C {
    match fmt {
        DataFormat::Ri => C::new(a, b),
        DataFormat::Ma => C::from_polar(a, b.to_radians()),
        DataFormat::Db => C::from_polar(10f64.powf(a / 20.0), b.to_radians()),
    }
}

fn encode(fmt: DataFormat, v: C) -> (f64, f64) {
    match fmt {
        DataFormat::Ri => (v.re, v.im),
        DataFormat::Ma => (v.norm(), v.arg().to_degrees()),
        DataFormat::Db => (20.0 * v.norm().log10(), v.arg().to_degrees()),
    }
}

/// Parses a two-port Touchstone (v1) file.
///
/// Comment lines of the form `! instant_id: 7` and `! load_w: 200` are read
/// back into the record's metadata.
pub fn parse_touchstone(text: &str) -> Result<SParamRecord> {
    let mut unit = 1e9;
    let mut fmt = DataFormat::Ma;
    let mut reference_ohm = 50.0;
    let mut saw_option = false;
    let mut rec = SParamRecord {
        freq_grid_hz: Vec::new(),
        s11: Vec::new(),
        s21: Vec::new(),
        s12: Vec::new(),
        s22: Vec::new(),
        reference_ohm,
        instant_id: 0,
        load_w: None,
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let (content, comment) = match raw.find('!') {
            Some(p) => (&raw[..p], Some(raw[p + 1..].trim())),
            None => (raw, None),
        };
        if let Some(c) = comment {
            if let Some(v) = c.strip_prefix("instant_id:") {
                rec.instant_id = v
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, "instant_id comment is not an integer"))?;
            } else if let Some(v) = c.strip_prefix("load_w:") {
                let v = v.trim();
                rec.load_w = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(v.parse().map_err(|_| parse_err(line_no, "load_w comment is not numeric"))?)
                };
            }
        }
        let content = content.trim();
        if content.is_empty() {
            continue;
        }

        if let Some(opts) = content.strip_prefix('#') {
            if saw_option {
                return Err(parse_err(line_no, "duplicate option line"));
            }
            if !rec.freq_grid_hz.is_empty() {
                return Err(parse_err(line_no, "option line after data"));
            }
            saw_option = true;
            let tokens: Vec<String> = opts.split_whitespace().map(|t| t.to_ascii_uppercase()).collect();
            let mut k = 0;
            while k < tokens.len() {
                match tokens[k].as_str() {
                    "HZ" => unit = 1.0,
                    "KHZ" => unit = 1e3,
                    "MHZ" => unit = 1e6,
                    "GHZ" => unit = 1e9,
                    "S" => {}
                    "Y" | "Z" | "H" | "G" => {
                        return Err(parse_err(line_no, format!("{} parameters are not supported", tokens[k])))
                    }
                    "RI" => fmt = DataFormat::Ri,
                    "MA" => fmt = DataFormat::Ma,
                    "DB" => fmt = DataFormat::Db,
                    "R" => {
                        k += 1;
                        reference_ohm = tokens
                            .get(k)
                            .and_then(|t| t.parse().ok())
                            .filter(|r: &f64| *r > 0.0)
                            .ok_or_else(|| parse_err(line_no, "R must be followed by a positive impedance"))?;
                    }
                    other => return Err(parse_err(line_no, format!("unknown option token {other:?}"))),
                }
                k += 1;
            }
            continue;
        }

        if content.starts_with('[') {
            return Err(parse_err(line_no, "Touchstone 2.0 keywords are not supported"));
        }

        let nums: Vec<f64> = content
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(line_no, format!("not a number: {t:?}"))))
            .collect::<Result<_>>()?;
        match nums.len() {
            9 => {}
            3 => return Err(parse_err(line_no, "one-port data; a two-port file needs 9 values per line")),
            n => return Err(parse_err(line_no, format!("expected 9 values for a two-port point, found {n}"))),
        }
        let f = nums[0] * unit;
        if !f.is_finite() || f < 0.0 {
            return Err(parse_err(line_no, "frequency must be finite and non-negative"));
        }
        if rec.freq_grid_hz.last().is_some_and(|&last| f <= last) {
            return Err(parse_err(line_no, "frequencies must be strictly increasing"));
        }
        rec.freq_grid_hz.push(f);
        rec.s11.push(decode(fmt, nums[1], nums[2]));
        rec.s21.push(decode(fmt, nums[3], nums[4]));
        rec.s12.push(decode(fmt, nums[5], nums[6]));
        rec.s22.push(decode(fmt, nums[7], nums[8]));
    }

    if !saw_option {
        return Err(parse_err(1, "missing option line (`# Hz S RI R 50`)"));
    }
    if rec.freq_grid_hz.is_empty() {
        return Err(parse_err(text.lines().count().max(1), "no data points"));
    }
    rec.reference_ohm = reference_ohm;
    Ok(rec)
}

/// Writes a two-port Touchstone file with the grid in Hz. RI output
/// round-trips through [`parse_touchstone`] bit for bit.
pub fn write_touchstone(rec: &SParamRecord, fmt: DataFormat) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "! cablewatch two-port record");
    let _ = writeln!(out, "! instant_id: {}", rec.instant_id);
    match rec.load_w {
        Some(l) => {
            let _ = writeln!(out, "! load_w: {l}");
        }
        None => {
            let _ = writeln!(out, "! load_w: none");
        }
    }
    let tag = match fmt {
        DataFormat::Ri => "RI",
        DataFormat::Ma => "MA",
        DataFormat::Db => "DB",
    };
    let _ = writeln!(out, "# Hz S {tag} R {}", rec.reference_ohm);
    for i in 0..rec.freq_grid_hz.len() {
        let _ = write!(out, "{}", rec.freq_grid_hz[i]);
        for v in [rec.s11[i], rec.s21[i], rec.s12[i], rec.s22[i]] {
            let (a, b) = encode(fmt, v);
            let _ = write!(out, " {a} {b}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfrTrace {
    pub freq_grid_hz: Vec<f64>,
    pub h: Vec<C>,
    /// Mean of |h| over the grid.
    pub psi1: f64,
    pub load_w: Option<f64>,
}

fn mean_magnitude(h: &[C]) -> f64 {
    h.iter().map(|v| v.norm()).sum::<f64>() / h.len() as f64
}

/// CFR taken as forward transmission S21.
pub fn cfr_from_sparams(rec: &SParamRecord) -> Result<CfrTrace> {
    rec.validate()?;
    Ok(CfrTrace {
        freq_grid_hz: rec.freq_grid_hz.clone(),
        h: rec.s21.clone(),
        psi1: mean_magnitude(&rec.s21),
        load_w: rec.load_w,
    })
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0))
}

/// Complex mean per frequency; `psi1` recomputed on the averaged response.
pub fn average_cfr(traces: &[CfrTrace]) -> Result<CfrTrace> {
    let first = traces.first().ok_or_else(|| invalid("no CFR traces to average"))?;
    if traces.iter().any(|t| !same_grid(&t.freq_grid_hz, &first.freq_grid_hz)) {
        return Err(invalid("CFR traces use different frequency grids"));
    }
    let n = traces.len() as f64;
    let mut h = vec![C::new(0.0, 0.0); first.h.len()];
    for t in traces {
        for (acc, v) in h.iter_mut().zip(&t.h) {
            *acc += v;
        }
    }
    for v in &mut h {
        *v /= n;
    }
    let load_w = if traces.iter().all(|t| t.load_w == first.load_w) {
        first.load_w
    } else {
        None
    };
    Ok(CfrTrace {
        freq_grid_hz: first.freq_grid_hz.clone(),
        psi1: mean_magnitude(&h),
        h,
        load_w,
    })
}

/// Midpoint thresholds on `healthy mean psi1 - psi1`, from averaged psi1
/// values per class ordered `(H, F_s, F_l)`.
pub fn derive_thresholds(psi1_by_class: &[Vec<f64>; 3]) -> Result<ThresholdPair> {
    derive_deviation_thresholds(psi1_by_class, Placement::MIDPOINT)
}

pub fn classify_sparam(avg: &CfrTrace, reference: &HealthyReference, th: &ThresholdPair) -> Verdict {
    Verdict::from_deviation(reference.deviation(avg.psi1, avg.load_w), th)
}
