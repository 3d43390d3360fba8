//! Real-valued sampled waveforms and their on-disk formats.
//!
//! Two interchange formats are supported for any sampled column (probe,
//! echo capture or reflectogram magnitudes):
//!
//! * CSV with header `sample_index,value`.
//! * A little-endian binary column file:
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"CWCOL01\0"
//! 8       8     sample_rate_hz   (f64)
//! 16      4     oversampling     (u32)
//! 20      4     reserved, zero   (u32)
//! 24      8     length           (u64)
//! 32      8*N   values           (f64)
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, parse_err, Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"CWCOL01\0";
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate_hz: f64, samples: Vec<f64>) -> Self {
        Self {
            sample_rate_hz,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    /// Circular shift by `n` samples (positive delays).
    pub fn delayed(&self, n: isize) -> Waveform {
        let len = self.samples.len() as isize;
        let samples = (0..len)
            .map(|i| self.samples[(i - n).rem_euclid(len) as usize])
            .collect();
        Waveform::new(self.sample_rate_hz, samples)
    }
}

/// Header carried by the binary column format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnHeader {
    pub sample_rate_hz: f64,
    pub oversampling: u32,
}

pub fn write_column_csv<W: Write>(out: W, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_index", "value"]).map_err(csv_io)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_column_csv<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let idx_col = headers.iter().position(|h| h == "sample_index");
    let val_col = headers
        .iter()
        .position(|h| h == "value")
        .ok_or_else(|| parse_err(1, "missing column `value`"))?;
    let idx_col = idx_col.ok_or_else(|| parse_err(1, "missing column `sample_index`"))?;

    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let idx: usize = rec
            .get(idx_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "sample_index is not an integer"))?;
        if idx != values.len() {
            return Err(parse_err(
                line,
                format!("expected sample_index {}, found {idx}", values.len()),
            ));
        }
        let v: f64 = rec
            .get(val_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "value is not numeric"))?;
        values.push(v);
    }
    Ok(values)
}

pub fn write_column_binary<W: Write>(mut out: W, header: ColumnHeader, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&header.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&header.oversampling.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_column_binary<R: Read>(mut input: R) -> Result<(ColumnHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != BINARY_MAGIC {
        return Err(invalid("not a binary column file (bad magic)"));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let sample_rate_hz = f64_at(8);
    let oversampling = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let expected = len
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| invalid("binary column length overflows"))?;
    if bytes.len() != expected {
        return Err(invalid(format!(
            "binary column declares {len} values but holds {} bytes of payload",
            bytes.len() - HEADER_LEN
        )));
    }
    let values = (0..len).map(|i| f64_at(HEADER_LEN + 8 * i)).collect();
    Ok((
        ColumnHeader {
            sample_rate_hz,
            oversampling,
        },
        values,
    ))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delay_is_circular() {
        let w = Waveform::new(1.0, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(w.delayed(1).samples, vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(w.delayed(-1).samples, vec![2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn csv_rejects_gaps_and_garbage() {
        let gap = "sample_index,value\n0,1.0\n2,3.0\n";
        assert!(matches!(read_column_csv(gap.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let bad = "sample_index,value\n0,abc\n";
        assert!(matches!(read_column_csv(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let missing = "index,v\n0,1\n";
        assert!(read_column_csv(missing.as_bytes()).is_err());
    }

    #[test]
    fn binary_rejects_truncation() {
        let mut buf = Vec::new();
        let h = ColumnHeader {
            sample_rate_hz: 160e6,
            oversampling: 32,
        };
        write_column_binary(&mut buf, h, &[1.0, 2.0]).unwrap();
        buf.pop();
        assert!(read_column_binary(buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn csv_and_binary_roundtrip_exactly(values in prop::collection::vec(-1e6f64..1e6, 0..64)) {
            let mut csv_buf = Vec::new();
            write_column_csv(&mut csv_buf, &values).unwrap();
            prop_assert_eq!(read_column_csv(csv_buf.as_slice()).unwrap(), values.clone());

            let h = ColumnHeader { sample_rate_hz: 160e6, oversampling: 32 };
            let mut bin = Vec::new();
            write_column_binary(&mut bin, h, &values).unwrap();
            let (h2, back) = read_column_binary(bin.as_slice()).unwrap();
            prop_assert_eq!(h2, h);
            prop_assert_eq!(back, values);
        }
    }
}
