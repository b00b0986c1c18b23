//! Feature, label and code files.
//!
//! Features: `SCQF`, u32 LE `n`, u32 LE `d`, then `n*d` f32 LE values in
//! row-major order. Files without the magic are parsed as headerless CSV.
//! Codes: `SCQB`, u32 LE `n`, u32 LE `L`, then `n` packed rows.
//! Labels: one decimal integer per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::codes::{bytes_per_row, padding_mask, BinaryCodes};
use crate::error::{Result, ScqError};

pub const FEATURE_MAGIC: &[u8; 4] = b"SCQF";
pub const CODE_MAGIC: &[u8; 4] = b"SCQB";
const HEADER_LEN: usize = 12;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| ScqError::InvalidInput(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn header(bytes: &[u8], what: &str) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(ScqError::format_at_byte(
            bytes.len(),
            format!("{what} header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    Ok((read_u32(bytes, 4) as usize, read_u32(bytes, 8) as usize))
}

pub fn parse_features(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return parse_csv(bytes);
    }
    let (n, d) = header(bytes, "feature")?;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| ScqError::format_at_byte(4, format!("dimensions {n}x{d} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(ScqError::format_at_byte(
            HEADER_LEN + payload.len().min(expected),
            format!("expected {expected} payload bytes for {n}x{d} floats, found {}", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64);
    Ok(DMatrix::from_row_iterator(n, d, values))
}

fn parse_csv(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ScqError::format_at_byte(e.valid_up_to(), "no SCQF magic and not valid UTF-8 text"))?;
    let mut rows: Vec<f64> = Vec::new();
    let mut d: Option<usize> = None;
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = rows.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| ScqError::format_at_line(i + 1, format!("cannot parse {:?} as a number", field.trim())))?;
            rows.push(v);
        }
        let width = rows.len() - before;
        match d {
            None => d = Some(width),
            Some(w) if w != width => {
                return Err(ScqError::format_at_line(i + 1, format!("expected {w} columns, found {width}")));
            }
            _ => {}
        }
        n += 1;
    }
    let d = d.ok_or_else(|| ScqError::InvalidInput("feature file is empty".into()))?;
    Ok(DMatrix::from_row_slice(n, d, &rows))
}

pub fn read_features(path: &Path) -> Result<DMatrix<f64>> {
    parse_features(&fs::read(path)?)
}

/// Binary feature encoding; values are stored as f32.
pub fn encode_features(x: &DMatrix<f64>) -> Result<Vec<u8>> {
    let (n, d) = x.shape();
    let (n32, d32) = (u32::try_from(n), u32::try_from(d));
    let (Ok(n32), Ok(d32)) = (n32, d32) else {
        return Err(ScqError::InvalidInput(format!("{n}x{d} does not fit the u32 header")));
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for i in 0..n {
        for j in 0..d {
            out.extend_from_slice(&(x[(i, j)] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_features(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, &encode_features(x)?)
}

pub fn parse_labels(text: &str) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            if text.lines().skip(i + 1).all(|l| l.trim().is_empty()) {
                break;
            }
            return Err(ScqError::format_at_line(i + 1, "blank line inside label file"));
        }
        out.push(
            t.parse::<i64>()
                .map_err(|_| ScqError::format_at_line(i + 1, format!("{t:?} is not an integer label")))?,
        );
    }
    if out.is_empty() {
        return Err(ScqError::InvalidInput("label file is empty".into()));
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let bytes = fs::read(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| ScqError::format_at_byte(e.valid_up_to(), "label file is not valid UTF-8"))?;
    parse_labels(text)
}

pub fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn encode_codes(codes: &BinaryCodes) -> Result<Vec<u8>> {
    let (Ok(n), Ok(bits)) = (u32::try_from(codes.n()), u32::try_from(codes.bits())) else {
        return Err(ScqError::InvalidInput("code matrix does not fit the u32 header".into()));
    };
    let mut out = Vec::with_capacity(HEADER_LEN + codes.packed().len());
    out.extend_from_slice(CODE_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(codes.packed());
    Ok(out)
}

pub fn parse_codes(bytes: &[u8]) -> Result<BinaryCodes> {
    if bytes.len() < 4 || &bytes[..4] != CODE_MAGIC {
        return Err(ScqError::format_at_byte(0, "missing SCQB magic"));
    }
    let (n, bits) = header(bytes, "code")?;
    if bits == 0 {
        return Err(ScqError::format_at_byte(8, "code length is zero"));
    }
    let stride = bytes_per_row(bits);
    let expected = n
        .checked_mul(stride)
        .ok_or_else(|| ScqError::format_at_byte(4, format!("{n} rows overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(ScqError::format_at_byte(
            HEADER_LEN + payload.len().min(expected),
            format!("expected {expected} payload bytes for {n} rows of {bits} bits, found {}", payload.len()),
        ));
    }
    let mask = padding_mask(bits);
    if mask != 0 {
        for i in 0..n {
            let at = (i + 1) * stride - 1;
            if payload[at] & mask != 0 {
                return Err(ScqError::format_at_byte(HEADER_LEN + at, format!("row {i} has nonzero padding bits")));
            }
        }
    }
    BinaryCodes::from_packed(n, bits, payload.to_vec())
}

pub fn write_codes(path: &Path, codes: &BinaryCodes) -> Result<()> {
    write_atomic(path, &encode_codes(codes)?)
}

pub fn read_codes(path: &Path) -> Result<BinaryCodes> {
    parse_codes(&fs::read(path)?)
}
