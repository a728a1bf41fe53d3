//! Embedding banks and the EMB1 file format.
//!
//! Layout: the magic bytes `EMB1`, a little-endian `u32` row count `n`, a
//! little-endian `u32` dimension `d`, then `n * d` little-endian `f32` values
//! in row-major order. Row metadata lives in a JSON Lines sidecar with one
//! `{id, label?, caption?}` object per row, in file order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

/// Row-major `n x d` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values do not form a {n}x{d} matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite value at row {}, column {}",
                i / d.max(1),
                i % d.max(1)
            )));
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Shape(format!("row {i} has a different length")));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // d may be zero, which chunks_exact rejects
        (0..self.n).map(move |i| self.row(i))
    }

    /// Largest deviation of a row norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.iter_rows()
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Error unless every row has unit norm within `tol`.
    pub fn ensure_normalized(&self, tol: f64) -> Result<()> {
        for (i, r) in self.iter_rows().enumerate() {
            let nrm = norm(r);
            if (nrm - 1.0).abs() > tol {
                return Err(Error::NotNormalized { row: i, norm: nrm });
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n: idx.len(),
            d: self.d,
            values,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |m: &str| Error::Shape(format!("EMB1: {m}"));
        let mut header = [0u8; 12];
        r.read_exact(&mut header)
            .map_err(|_| fmt("truncated header"))?;
        if &header[..4] != MAGIC {
            return Err(fmt("bad magic bytes"));
        }
        let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)
            .map_err(|e| fmt(&e.to_string()))?;
        if body.len() != n * d * 4 {
            return Err(fmt(&format!(
                "expected {} payload bytes for {n}x{d}, found {}",
                n * d * 4,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n, d, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            Error::Shape(m) => Error::ingest(path, m),
            other => other,
        })
    }
}

pub(crate) fn norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// One sidecar line describing the embedding row at the same position.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SidecarRow {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// For text rows: the id of the image this caption describes. Falls back
    /// to `id` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

/// Read a JSON Lines file, skipping blank lines; errors carry the line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::ingest(path, format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path, expected_rows: usize) -> Result<Vec<SidecarRow>> {
    let rows: Vec<SidecarRow> = read_jsonl(path)?;
    if rows.len() != expected_rows {
        return Err(Error::ingest(
            path,
            format!(
                "sidecar has {} rows but the embedding file has {expected_rows}",
                rows.len()
            ),
        ));
    }
    Ok(rows)
}
