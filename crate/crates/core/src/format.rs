//! `BGN1` tensor files and `key=value` text files.
//!
//! Tensor layout, all little-endian: magic `BGN1`, `u32` rank, `rank × u32`
//! dims, `u32` dtype code, then the row-major payload. Dtype 0 is `f32`
//! (fields and predictions); dtype 1 is `f64`, used for checkpoints so that
//! parameters round-trip bit-exactly.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BGN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

pub fn encode_tensor(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + width * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    match dtype {
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut r = bytes;
    let word = |r: &mut &[u8]| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        Ok(u32::from_le_bytes(b))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let rank = word(&mut r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(bad("unsupported rank"));
    }
    let shape = (0..rank)
        .map(|_| word(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let dtype = Dtype::from_code(word(&mut r)?).ok_or_else(|| bad("unknown dtype code"))?;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = match dtype {
        Dtype::F32 => {
            if r.len() != 4 * n {
                return Err(bad("payload length does not match shape"));
            }
            r.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        }
        Dtype::F64 => {
            if r.len() != 8 * n {
                return Err(bad("payload length does not match shape"));
            }
            r.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
    };
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_tensor(t, dtype))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?, path)
}

/// Ordered `key=value` pairs. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            detail: format!("expected key=value, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                detail: "empty key".into(),
            });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut text = String::new();
    BufReader::new(fs::File::open(path)?).read_to_string(&mut text)?;
    parse_kv(&text)
}

pub fn write_kv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for (k, v) in pairs {
        writeln!(f, "{k}={v}")?;
    }
    Ok(())
}

/// Reads lines lazily; used where only a prefix matters.
pub fn first_line(path: &Path) -> Result<String> {
    let mut line = String::new();
    BufReader::new(fs::File::open(path)?).read_line(&mut line)?;
    Ok(line.trim_end().to_string())
}
