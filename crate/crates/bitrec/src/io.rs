//! Measurement set files: a little-endian binary container and a CSV bundle.
//!
//! Binary layout: `"BREC"`, `u32` version, `u32` L, `u64` M, `u64` N, then per
//! channel a β flag byte, β as `f64` when the flag is 1, Φ row-major, y.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use bitrec_core::model::{Channel, MeasurementSet, ModelError, Precision};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"BREC";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported format version {found} (expected {VERSION})")]
    FormatVersionMismatch { found: u32 },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_channels(channels: &[Channel]) -> Result<(usize, usize), IoError> {
    let first = channels.first().ok_or_else(|| IoError::Format("no channels to write".into()))?;
    let (m, n) = first.phi().shape();
    for ch in channels {
        if ch.phi().shape() != (m, n) || ch.y().len() != m {
            return Err(IoError::Format("channels disagree in shape".into()));
        }
    }
    Ok((m, n))
}

/// Serialises `channels`; fails on an empty list.
pub fn encode_channels(channels: &[Channel]) -> Result<Vec<u8>, IoError> {
    let (m, n) = check_channels(channels)?;
    let l = u32::try_from(channels.len()).map_err(|_| IoError::Format("too many channels".into()))?;
    let mut out = Vec::with_capacity(28 + channels.len() * (9 + 8 * (m * n + m)));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&l.to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for ch in channels {
        match ch.beta() {
            Some(b) => {
                out.push(1);
                out.extend_from_slice(&b.get().to_le_bytes());
            }
            None => out.push(0),
        }
        for i in 0..m {
            for j in 0..n {
                out.extend_from_slice(&ch.phi()[(i, j)].to_le_bytes());
            }
        }
        for v in ch.y().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode(ms: &MeasurementSet) -> Result<Vec<u8>, IoError> {
    encode_channels(ms.channels())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| IoError::CorruptHeader(format!("truncated while reading {what}")))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>, IoError> {
        let bytes = count.checked_mul(8).ok_or_else(|| IoError::CorruptHeader("payload size overflows".into()))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode(data: &[u8]) -> Result<MeasurementSet, IoError> {
    let mut c = Cursor { data, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(IoError::CorruptHeader("bad magic bytes".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(IoError::FormatVersionMismatch { found: version });
    }
    let l = c.u32("channel count")? as usize;
    let m = usize::try_from(c.u64("row count")?).map_err(|_| IoError::CorruptHeader("row count too large".into()))?;
    let n = usize::try_from(c.u64("column count")?).map_err(|_| IoError::CorruptHeader("column count too large".into()))?;
    if l == 0 {
        return Err(IoError::CorruptHeader("zero channels".into()));
    }
    let per_channel = m.checked_mul(n).and_then(|mn| mn.checked_add(m)).and_then(|v| v.checked_mul(8));
    match per_channel.and_then(|p| p.checked_mul(l)) {
        Some(total) if total <= data.len() => {}
        _ => return Err(IoError::CorruptHeader("header sizes exceed the payload".into())),
    }
    let mut channels = Vec::with_capacity(l);
    for _ in 0..l {
        let flag = c.take(1, "precision flag")?[0];
        let beta = match flag {
            0 => None,
            1 => {
                let v = c.f64s(1, "precision")?[0];
                Some(Precision::new(v).ok_or(ModelError::NonPositivePrecision { channel: channels.len(), value: v })?)
            }
            other => return Err(IoError::CorruptHeader(format!("precision flag {other}"))),
        };
        let phi = DMatrix::from_row_slice(m, n, &c.f64s(m * n, "matrix")?);
        let y = DVector::from_vec(c.f64s(m, "measurements")?);
        channels.push(match beta {
            Some(b) => Channel::with_precision(phi, y, b),
            None => Channel::new(phi, y),
        });
    }
    if c.pos != data.len() {
        return Err(IoError::CorruptHeader(format!("{} trailing bytes", data.len() - c.pos)));
    }
    Ok(MeasurementSet::new(channels)?)
}

pub fn write_binary(path: &Path, ms: &MeasurementSet) -> Result<(), IoError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(ms)?)?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<MeasurementSet, IoError> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    decode(&data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub betas: Vec<Option<f64>>,
}

/// Writes `phi_<l>.csv`, `y_<l>.csv` and `meta.json` into `dir`, creating it if needed.
pub fn write_bundle(dir: &Path, ms: &MeasurementSet) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    for (l, ch) in ms.channels().iter().enumerate() {
        let mut phi = String::new();
        for i in 0..ch.phi().nrows() {
            let row: Vec<String> = ch.phi().row(i).iter().map(|v| format!("{v:e}")).collect();
            phi.push_str(&row.join(","));
            phi.push('\n');
        }
        fs::write(dir.join(format!("phi_{l}.csv")), phi)?;
        let y: String = ch.y().iter().map(|v| format!("{v:e}\n")).collect();
        fs::write(dir.join(format!("y_{l}.csv")), y)?;
    }
    let meta = BundleMeta {
        l: ms.l(),
        m: ms.m(),
        n: ms.n(),
        betas: ms.channels().iter().map(|c| c.beta().map(Precision::get)).collect(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| IoError::Format(e.to_string()))?;
    fs::write(dir.join("meta.json"), text)?;
    Ok(())
}

fn parse_rows(text: &str, file: &str) -> Result<Vec<Vec<f64>>, IoError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| IoError::Format(format!("{file} line {}: `{}`: {e}", i + 1, c.trim())))
                })
                .collect()
        })
        .collect()
}

/// Reads a bundle written by [`write_bundle`] or by hand. `meta.json` is optional
/// when the directory holds a single `phi_0.csv`/`y_0.csv` pair.
pub fn read_bundle(dir: &Path) -> Result<MeasurementSet, IoError> {
    let meta_path = dir.join("meta.json");
    let meta: Option<BundleMeta> = if meta_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| IoError::Format(e.to_string()))?)
    } else {
        None
    };
    let l = meta.as_ref().map_or(1, |m| m.l);
    if l == 0 {
        return Err(IoError::Format("meta.json lists zero channels".into()));
    }
    let mut channels = Vec::with_capacity(l);
    for k in 0..l {
        let pf = format!("phi_{k}.csv");
        let rows = parse_rows(&fs::read_to_string(dir.join(&pf))?, &pf)?;
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(IoError::Format(format!("{pf} has ragged rows")));
        }
        let flat: Vec<f64> = rows.concat();
        let phi = DMatrix::from_row_slice(rows.len(), n, &flat);
        let yf = format!("y_{k}.csv");
        let y: Vec<f64> = parse_rows(&fs::read_to_string(dir.join(&yf))?, &yf)?.concat();
        let y = DVector::from_vec(y);
        let beta = meta.as_ref().and_then(|m| m.betas.get(k).copied().flatten());
        channels.push(match beta {
            Some(v) => Channel::with_precision(
                phi,
                y,
                Precision::new(v).ok_or(ModelError::NonPositivePrecision { channel: k, value: v })?,
            ),
            None => Channel::new(phi, y),
        });
    }
    let ms = MeasurementSet::new(channels)?;
    if let Some(m) = &meta {
        if (m.m, m.n) != (ms.m(), ms.n()) {
            return Err(IoError::Format(format!("meta.json says {}x{}, files hold {}x{}", m.m, m.n, ms.m(), ms.n())));
        }
    }
    Ok(ms)
}

/// Reads either format: a directory is a bundle, a file starting with the magic
/// bytes is binary, and any other file is one `Φ | y` CSV whose last column is `y`.
pub fn read_any(path: &Path) -> Result<MeasurementSet, IoError> {
    if path.is_dir() {
        return read_bundle(path);
    }
    let data = fs::read(path)?;
    if data.starts_with(MAGIC) {
        return decode(&data);
    }
    let text = String::from_utf8(data).map_err(|_| IoError::Format("input is neither binary nor text".into()))?;
    let name = path.display().to_string();
    let rows = parse_rows(&text, &name)?;
    let width = rows.first().map_or(0, Vec::len);
    if width < 2 || rows.iter().any(|r| r.len() != width) {
        return Err(IoError::Format(format!("{name}: expected rows of equal length with at least two columns")));
    }
    let n = width - 1;
    let flat: Vec<f64> = rows.iter().flat_map(|r| r[..n].iter().copied()).collect();
    let phi = DMatrix::from_row_slice(rows.len(), n, &flat);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[n]));
    Ok(MeasurementSet::single(phi, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MeasurementSet {
        let phi = DMatrix::from_fn(4, 6, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0) - 0.25);
        let y = DVector::from_fn(4, |i, _| i as f64 * 0.1 - 1.0 / 3.0);
        let b = Channel::with_precision(phi.clone() * 2.0, y.clone(), Precision::new(7.5).unwrap());
        MeasurementSet::new(vec![Channel::new(phi, y), b]).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"BREC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 6);
        assert_eq!(bytes[28], 0);
        assert_eq!(bytes.len(), 28 + 1 + 8 * 28 + 1 + 8 + 8 * 28);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = encode(&sample()).unwrap();
        assert!(matches!(decode(&bytes[..20]), Err(IoError::CorruptHeader(_))));
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(IoError::FormatVersionMismatch { found: 2 })));
        bytes[4] = 1;
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(IoError::CorruptHeader(_))));
        assert!(matches!(encode_channels(&[]), Err(IoError::Format(_))));
    }
}
