//! On-disk formats.
//!
//! * Arrays: little-endian `f64`, an 8-word header
//!   `[magic, version, nx, ny, pitch, centered, kind, reserved]` followed by
//!   `nx * ny` row-major samples.
//! * Rasters: binary 16-bit PGM (`P5`, big-endian samples), min-max scaled,
//!   with the scale written to `<file>.scale`.
//! * Buckets: CSV with header `j,value`.

use std::fs;
use std::path::{Path, PathBuf};

use gi_core::grid::Grid2D;

use crate::CliError;

/// "GIAR" read as a big-endian `u32`.
pub const MAGIC: f64 = 1_195_983_186.0;
pub const VERSION: f64 = 1.0;
const HEADER_WORDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Image = 1,
    Spectrum = 2,
    Psf = 3,
    Correlation = 4,
    Object = 5,
}

impl ArrayKind {
    fn from_tag(t: f64) -> Option<Self> {
        Some(match t as i64 {
            1 => Self::Image,
            2 => Self::Spectrum,
            3 => Self::Psf,
            4 => Self::Correlation,
            5 => Self::Object,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub kind: ArrayKind,
    pub grid: Grid2D,
    pub centered: bool,
    pub values: Vec<f64>,
}

fn read_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Read { path: path.to_path_buf(), source }
}

fn write_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Write { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> CliError {
    CliError::Format { path: path.to_path_buf(), offset, msg: msg.into() }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| read_err(path, e))?;
    String::from_utf8(bytes).map_err(|e| format_err(path, e.utf8_error().valid_up_to(), "invalid UTF-8"))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| write_err(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| write_err(path, e))
}

pub fn encode_array(a: &ArrayFile) -> Vec<u8> {
    let header = [
        MAGIC,
        VERSION,
        a.grid.nx() as f64,
        a.grid.ny() as f64,
        a.grid.pitch(),
        if a.centered { 1.0 } else { 0.0 },
        a.kind as i64 as f64,
        0.0,
    ];
    let mut out = Vec::with_capacity(8 * (HEADER_WORDS + a.values.len()));
    for w in header.iter().chain(&a.values) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8], path: &Path) -> Result<ArrayFile, CliError> {
    if bytes.len() < 8 * HEADER_WORDS {
        return Err(format_err(path, bytes.len(), format!("truncated header, {} bytes", bytes.len())));
    }
    let word = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    if word(0) != MAGIC {
        return Err(format_err(path, 0, "bad magic"));
    }
    if word(1) != VERSION {
        return Err(format_err(path, 8, format!("unsupported version {}", word(1))));
    }
    let dim = |i: usize| -> Result<usize, CliError> {
        let v = word(i);
        if v.fract() != 0.0 || !(2.0..=65536.0).contains(&v) {
            return Err(format_err(path, 8 * i, format!("bad dimension {v}")));
        }
        Ok(v as usize)
    };
    let (nx, ny) = (dim(2)?, dim(3)?);
    let grid = Grid2D::new(nx, ny, word(4)).map_err(|e| format_err(path, 32, e.to_string()))?;
    let centered = match word(5) {
        0.0 => false,
        1.0 => true,
        v => return Err(format_err(path, 40, format!("bad centered flag {v}"))),
    };
    let kind = ArrayKind::from_tag(word(6)).ok_or_else(|| format_err(path, 48, format!("unknown kind {}", word(6))))?;
    let expected = 8 * (HEADER_WORDS + nx * ny);
    if bytes.len() != expected {
        return Err(format_err(
            path,
            bytes.len().min(expected),
            format!("expected {expected} bytes for {nx}x{ny}, found {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(nx * ny);
    for i in 0..nx * ny {
        let v = word(HEADER_WORDS + i);
        if !v.is_finite() {
            return Err(format_err(path, 8 * (HEADER_WORDS + i), "non-finite sample"));
        }
        values.push(v);
    }
    Ok(ArrayFile { kind, grid, centered, values })
}

pub fn write_array(path: &Path, a: &ArrayFile) -> Result<(), CliError> {
    write_bytes(path, &encode_array(a))
}

pub fn read_array(path: &Path) -> Result<ArrayFile, CliError> {
    let bytes = fs::read(path).map_err(|e| read_err(path, e))?;
    decode_array(&bytes, path)
}

fn scale_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale");
    PathBuf::from(s)
}

/// Returns the PGM bytes and the `(min, max)` mapped to `0..=65535`.
pub fn encode_pgm(grid: &Grid2D, values: &[f64]) -> (Vec<u8>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n65535\n", grid.nx(), grid.ny()).into_bytes();
    let span = hi - lo;
    for &v in values {
        let q = if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    (out, lo, hi)
}

pub fn write_pgm(path: &Path, grid: &Grid2D, values: &[f64]) -> Result<(), CliError> {
    let (bytes, lo, hi) = encode_pgm(grid, values);
    write_bytes(path, &bytes)?;
    write_bytes(&scale_path(path), format!("min = {lo:?}\nmax = {hi:?}\n").as_bytes())
}

/// Decodes a 16-bit `P5` file into raw sample values.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>), CliError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, pos, "truncated PGM header"));
        }
        fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string()));
    }
    pos += 1;
    if fields[0].1 != "P5" {
        return Err(format_err(path, 0, "not a binary PGM"));
    }
    let num = |i: usize| -> Result<usize, CliError> {
        fields[i].1.parse().map_err(|_| format_err(path, fields[i].0, format!("bad header field '{}'", fields[i].1)))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 65535 {
        return Err(format_err(path, fields[3].0, format!("expected maxval 65535, got {maxval}")));
    }
    let need = pos + 2 * w * h;
    if bytes.len() != need {
        return Err(format_err(path, bytes.len().min(need), format!("expected {need} bytes, found {}", bytes.len())));
    }
    let samples = bytes[pos..].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, samples))
}

pub fn encode_buckets(buckets: &[f64]) -> String {
    let mut s = String::with_capacity(24 * buckets.len() + 8);
    s.push_str("j,value\n");
    for (j, b) in buckets.iter().enumerate() {
        s.push_str(&format!("{j},{b:?}\n"));
    }
    s
}

pub fn decode_buckets(text: &str, path: &Path) -> Result<Vec<f64>, CliError> {
    let mut offset = 0;
    let mut out = Vec::new();
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len();
        let line = line.trim_end_matches(['\n', '\r']);
        if n == 0 {
            if line != "j,value" {
                return Err(format_err(path, 0, "missing 'j,value' header"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (j, v) = line.split_once(',').ok_or_else(|| format_err(path, start, "expected 'j,value'"))?;
        let j: usize = j.parse().map_err(|_| format_err(path, start, format!("bad index '{j}'")))?;
        if j != out.len() {
            return Err(format_err(path, start, format!("index {j} out of order, expected {}", out.len())));
        }
        let v: f64 = v.parse().map_err(|_| format_err(path, start + line.find(',').unwrap() + 1, format!("bad value '{v}'")))?;
        if !v.is_finite() {
            return Err(format_err(path, start, "non-finite bucket"));
        }
        out.push(v);
    }
    if out.is_empty() && text.is_empty() {
        return Err(format_err(path, 0, "empty bucket file"));
    }
    Ok(out)
}

pub fn read_buckets(path: &Path) -> Result<Vec<f64>, CliError> {
    decode_buckets(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip_is_bit_exact() {
        let g = Grid2D::new(4, 3, 7.4e-6).unwrap();
        let values: Vec<f64> = (0..12).map(|i| (i as f64).sin() * 1e-7).collect();
        let a = ArrayFile { kind: ArrayKind::Spectrum, grid: g, centered: true, values };
        let bytes = encode_array(&a);
        assert_eq!(bytes.len(), 8 * 20);
        assert_eq!(decode_array(&bytes, Path::new("a")).unwrap(), a);
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(decode_array(&bad, Path::new("a")), Err(CliError::Format { offset: 0, .. })));
        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(decode_array(short, Path::new("a")), Err(CliError::Format { offset: 152, .. })));
        let mut nan = bytes.clone();
        nan[64..72].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_array(&nan, Path::new("a")), Err(CliError::Format { offset: 64, .. })));
    }

    #[test]
    fn pgm_scaling_and_header() {
        let g = Grid2D::new(3, 2, 1.0).unwrap();
        let (bytes, lo, hi) = encode_pgm(&g, &[1.0, 2.0, 3.0, 1.5, 1.0, 3.0]);
        assert_eq!((lo, hi), (1.0, 3.0));
        let (w, h, s) = decode_pgm(&bytes, Path::new("p")).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(s, vec![0, 32768, 65535, 16384, 0, 65535]);
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        let (flat, _, _) = encode_pgm(&g, &[2.0; 6]);
        assert!(decode_pgm(&flat, Path::new("p")).unwrap().2.iter().all(|&v| v == 0));
    }

    #[test]
    fn bucket_csv_round_trip_and_errors() {
        let b = vec![1.0, 2.5e-12, 0.1 + 0.2, 123456.789];
        let text = encode_buckets(&b);
        assert_eq!(decode_buckets(&text, Path::new("b")).unwrap(), b);
        let e = decode_buckets("j,value\n0,1\n1,x\n", Path::new("b")).unwrap_err();
        assert!(matches!(e, CliError::Format { offset: 14, .. }), "{e}");
        assert!(decode_buckets("0,1\n", Path::new("b")).is_err());
        assert!(decode_buckets("j,value\n1,1\n", Path::new("b")).is_err());
    }
}
