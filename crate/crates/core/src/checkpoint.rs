//! Versioned text checkpoints.
//!
//! Values are stored as the hex bit pattern of the float, so loading a
//! checkpoint reproduces scores bit-exactly at the same precision. One
//! `param` header line per tensor (name, rank, extents), one line of
//! space-separated hex words after it.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Real, Tensor};

#[cfg(not(feature = "f32"))]
const PRECISION: &str = "f64";
#[cfg(feature = "f32")]
const PRECISION: &str = "f32";

const MAGIC: &str = "listrec-checkpoint";
const VERSION: &str = "v1";

#[cfg(not(feature = "f32"))]
fn encode(v: Real) -> String {
    format!("{:016x}", v.to_bits())
}
#[cfg(feature = "f32")]
fn encode(v: Real) -> String {
    format!("{:08x}", v.to_bits())
}

#[cfg(not(feature = "f32"))]
fn decode(s: &str) -> Option<Real> {
    u64::from_str_radix(s, 16).ok().map(Real::from_bits)
}
#[cfg(feature = "f32")]
fn decode(s: &str) -> Option<Real> {
    u32::from_str_radix(s, 16).ok().map(Real::from_bits)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    let flat = params.flat();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{MAGIC} {VERSION} {PRECISION} {}", flat.len())?;
    for p in flat {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        writeln!(
            f,
            "param {} {} {}",
            p.name,
            p.value.shape().len(),
            dims.join(" ")
        )?;
        let words: Vec<String> = p.value.data().iter().map(|&v| encode(v)).collect();
        writeln!(f, "{}", words.join(" "))?;
    }
    Ok(())
}

/// Reads a checkpoint into name -> tensor form.
pub fn load(path: &Path) -> Result<HashMap<String, Tensor>> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line: line + 1,
        msg,
    };

    let (i, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty checkpoint".into()))?;
    let header = header?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 || head[0] != MAGIC || head[1] != VERSION {
        return Err(parse_err(i, format!("bad header `{header}`")));
    }
    if head[2] != PRECISION {
        return Err(parse_err(
            i,
            format!("checkpoint is {} but this build is {PRECISION}", head[2]),
        ));
    }
    let count: usize = head[3]
        .parse()
        .map_err(|_| parse_err(i, "bad parameter count".into()))?;

    let mut out = HashMap::new();
    for _ in 0..count {
        let (i, meta) = lines
            .next()
            .ok_or_else(|| parse_err(0, "truncated checkpoint".into()))?;
        let meta = meta?;
        let parts: Vec<&str> = meta.split_whitespace().collect();
        if parts.len() < 3 || parts[0] != "param" {
            return Err(parse_err(i, format!("expected param line, got `{meta}`")));
        }
        let name = parts[1].to_string();
        let rank: usize = parts[2]
            .parse()
            .map_err(|_| parse_err(i, "bad rank".into()))?;
        if parts.len() != 3 + rank {
            return Err(parse_err(i, format!("expected {rank} extents")));
        }
        let shape: Vec<usize> = parts[3..]
            .iter()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(i, "bad extent".into()))?;
        let (j, payload) = lines
            .next()
            .ok_or_else(|| parse_err(i, "missing value line".into()))?;
        let payload = payload?;
        let data: Option<Vec<Real>> = payload.split_whitespace().map(decode).collect();
        let data = data.ok_or_else(|| parse_err(j, "bad hex value".into()))?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| parse_err(j, format!("shape/data mismatch: {e}")))?;
        out.insert(name, tensor);
    }
    Ok(out)
}

/// Loads a checkpoint into an existing parameter layout, validating that
/// every expected name is present with the right shape.
pub fn load_into(path: &Path, params: &mut ModelParams) -> Result<()> {
    let mut loaded = load(path)?;
    for p in params.flat_mut() {
        let tensor = loaded.remove(&p.name).ok_or_else(|| {
            Error::invalid(format!(
                "checkpoint {} is missing parameter {}",
                path.display(),
                p.name
            ))
        })?;
        if tensor.shape() != p.value.shape() {
            return Err(Error::invalid(format!(
                "checkpoint {}: parameter {} has shape {:?}, expected {:?}",
                path.display(),
                p.name,
                tensor.shape(),
                p.value.shape()
            )));
        }
        p.value = tensor;
        p.zero_grad();
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::invalid(format!(
            "checkpoint {} has unexpected parameter {extra}",
            path.display()
        )));
    }
    Ok(())
}
