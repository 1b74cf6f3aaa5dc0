//! Binary and JSON encodings of trains.
//!
//! Binary record: 4-byte magic (`TTV1` for vectors, `TTO1` for operators),
//! `m` as u64, `m` mode sizes as u64, `m + 1` ranks as u64, then every core in
//! order with its entries row-major as f64. All integers and floats are
//! little-endian. Records are self-delimiting and may be concatenated.

use std::io::{Read, Write};

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use super::{TTOperator, TTVector};
use crate::error::{Error, Result};

const MAGIC_VECTOR: &[u8; 4] = b"TTV1";
const MAGIC_OPERATOR: &[u8; 4] = b"TTO1";
/// Guards against absurd headers in corrupt files.
const MAX_ENTRIES: u64 = 1 << 31;

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], sizes: &[usize], ranks: &[usize]) -> Result<()> {
    w.write_all(magic)?;
    write_u64(w, sizes.len() as u64)?;
    for &n in sizes {
        write_u64(w, n as u64)?;
    }
    for &r in ranks {
        write_u64(w, r as u64)?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&got)
        )));
    }
    let m = read_u64(r)?;
    if m == 0 || m > 1024 {
        return Err(Error::Format(format!("implausible order {m}")));
    }
    let sizes = (0..m).map(|_| read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let ranks = (0..=m).map(|_| read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    Ok((sizes, ranks))
}

fn read_f64s<R: Read>(r: &mut R, count: u64) -> Result<Vec<f64>> {
    if count > MAX_ENTRIES {
        return Err(Error::Format(format!("core with {count} entries")));
    }
    let mut buf = vec![0u8; count as usize * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_f64s<'a, W: Write>(w: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_vector<W: Write>(w: &mut W, v: &TTVector) -> Result<()> {
    write_header(w, MAGIC_VECTOR, &v.mode_sizes(), &v.ranks())?;
    for core in v.cores() {
        // iter() walks in logical row-major order regardless of memory layout
        write_f64s(w, core.iter())?;
    }
    Ok(())
}

pub fn read_vector<R: Read>(r: &mut R) -> Result<TTVector> {
    let (sizes, ranks) = read_header(r, MAGIC_VECTOR)?;
    let mut cores = Vec::with_capacity(sizes.len());
    for (k, &n) in sizes.iter().enumerate() {
        let shape = (ranks[k], n, ranks[k + 1]);
        let data = read_f64s(r, (shape.0 as u64) * (shape.1 as u64) * (shape.2 as u64))?;
        cores.push(Array3::from_shape_vec(shape, data).map_err(|e| Error::Format(e.to_string()))?);
    }
    TTVector::new(cores).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_operator<W: Write>(w: &mut W, a: &TTOperator) -> Result<()> {
    write_header(w, MAGIC_OPERATOR, &a.mode_sizes(), &a.ranks())?;
    for core in a.cores() {
        write_f64s(w, core.iter())?;
    }
    Ok(())
}

pub fn read_operator<R: Read>(r: &mut R) -> Result<TTOperator> {
    let (sizes, ranks) = read_header(r, MAGIC_OPERATOR)?;
    let mut cores = Vec::with_capacity(sizes.len());
    for (k, &n) in sizes.iter().enumerate() {
        let shape = (ranks[k], n, n, ranks[k + 1]);
        let count = (shape.0 as u64) * (n as u64) * (n as u64) * (shape.3 as u64);
        let data = read_f64s(r, count)?;
        cores.push(Array4::from_shape_vec(shape, data).map_err(|e| Error::Format(e.to_string()))?);
    }
    TTOperator::new(cores).map_err(|e| Error::Format(e.to_string()))
}

/// JSON form of a train: header fields plus each core flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTRecord {
    pub kind: String,
    pub mode_sizes: Vec<usize>,
    pub ranks: Vec<usize>,
    pub cores: Vec<Vec<f64>>,
}

impl From<&TTVector> for TTRecord {
    fn from(v: &TTVector) -> Self {
        TTRecord {
            kind: "vector".into(),
            mode_sizes: v.mode_sizes(),
            ranks: v.ranks(),
            cores: v.cores().iter().map(|c| c.iter().copied().collect()).collect(),
        }
    }
}

impl From<&TTOperator> for TTRecord {
    fn from(a: &TTOperator) -> Self {
        TTRecord {
            kind: "operator".into(),
            mode_sizes: a.mode_sizes(),
            ranks: a.ranks(),
            cores: a.cores().iter().map(|c| c.iter().copied().collect()).collect(),
        }
    }
}

impl TTRecord {
    fn check(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("record kind '{}' where '{kind}' expected", self.kind)));
        }
        if self.ranks.len() != self.mode_sizes.len() + 1 || self.cores.len() != self.mode_sizes.len() {
            return Err(Error::Format("header lengths disagree".into()));
        }
        Ok(())
    }

    pub fn to_vector(&self) -> Result<TTVector> {
        self.check("vector")?;
        let cores = self
            .cores
            .iter()
            .enumerate()
            .map(|(k, data)| {
                Array3::from_shape_vec((self.ranks[k], self.mode_sizes[k], self.ranks[k + 1]), data.clone())
                    .map_err(|e| Error::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        TTVector::new(cores)
    }

    pub fn to_operator(&self) -> Result<TTOperator> {
        self.check("operator")?;
        let cores = self
            .cores
            .iter()
            .enumerate()
            .map(|(k, data)| {
                let n = self.mode_sizes[k];
                Array4::from_shape_vec((self.ranks[k], n, n, self.ranks[k + 1]), data.clone())
                    .map_err(|e| Error::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        TTOperator::new(cores)
    }
}
