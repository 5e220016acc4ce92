//! Labelled datasets: ingestion, synthetic generation and agent partitioning.
//!
//! Two on-disk formats are supported. CSV files start with a header
//! `label,f0,f1,...` followed by one sample per row. Binary files start with
//! the magic `VRLMDS1\0`, then the row and feature counts as little-endian
//! `u64`, then each row as little-endian `f64` values with the label first.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VRLMDS1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.csv` is CSV, everything else binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Feature rows with binary labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                context: "dataset labels",
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        Ok(Dataset { features, labels })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Shuffle with `seed` and split into `m` equal shards. Rows beyond
    /// `m · ⌊rows/m⌋` are dropped.
    pub fn partition(&self, m: usize, seed: u64) -> Result<Vec<Dataset>> {
        if m == 0 {
            return Err(Error::Precondition(
                "cannot partition among zero agents".into(),
            ));
        }
        let per = self.rows() / m;
        if per == 0 {
            return Err(Error::Precondition(format!(
                "{} rows cannot fill {m} shards",
                self.rows()
            )));
        }
        let dropped = self.rows() - per * m;
        if dropped > 0 {
            log::warn!(
                "{} rows do not divide among {m} agents; dropping {dropped}",
                self.rows()
            );
        }
        let mut order: Vec<usize> = (0..self.rows()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok((0..m)
            .map(|i| {
                let idx = &order[i * per..(i + 1) * per];
                Dataset {
                    features: self.features.select_rows(idx),
                    labels: idx.iter().map(|&r| self.labels[r]).collect(),
                }
            })
            .collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for r in 0..self.rows() {
            out.push_str(&format!("{}", self.labels[r]));
            for j in 0..self.dim() {
                out.push_str(&format!(",{:e}", self.features[(r, j)]));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 8 * self.rows() * (self.dim() + 1));
        buf.write_all(MAGIC).unwrap();
        buf.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for r in 0..self.rows() {
            buf.extend_from_slice(&self.labels[r].to_le_bytes());
            for j in 0..self.dim() {
                buf.extend_from_slice(&self.features[(r, j)].to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    match format {
        Format::Csv => load_csv(path),
        Format::Binary => load_binary(path),
    }
}

fn ingest(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Rows are numbered from 1 after the header.
fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ingest(path, 0, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(ingest(path, 0, "header must be `label,f0,f1,...`"));
    }
    let d = cols.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(ingest(
                path,
                row,
                format!("expected {} fields, found {}", d + 1, fields.len()),
            ));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let parsed = parsed.map_err(|e| ingest(path, row, e.to_string()))?;
        push_row(path, row, &parsed, &mut labels, &mut values)?;
    }
    Ok(Dataset {
        features: DMatrix::from_row_slice(labels.len(), d, &values),
        labels,
    })
}

fn load_binary(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(ingest(path, 0, "missing binary dataset header"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    let (rows, d) = (word(8) as usize, word(16) as usize);
    let stride = 8 * (d + 1);
    let mut labels = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows * d);
    for r in 0..rows {
        let start = 24 + r * stride;
        if bytes.len() < start + stride {
            return Err(ingest(path, r + 1, "truncated row"));
        }
        let row: Vec<f64> = (0..=d)
            .map(|j| {
                f64::from_le_bytes(bytes[start + 8 * j..start + 8 * j + 8].try_into().unwrap())
            })
            .collect();
        push_row(path, r + 1, &row, &mut labels, &mut values)?;
    }
    Ok(Dataset {
        features: DMatrix::from_row_slice(rows, d, &values),
        labels,
    })
}

fn push_row(
    path: &Path,
    row: usize,
    fields: &[f64],
    labels: &mut Vec<f64>,
    values: &mut Vec<f64>,
) -> Result<()> {
    let label = fields[0];
    if label != 0.0 && label != 1.0 {
        return Err(ingest(
            path,
            row,
            format!("label must be 0 or 1, got {label}"),
        ));
    }
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(ingest(path, row, "non-finite feature"));
    }
    labels.push(label);
    values.extend_from_slice(&fields[1..]);
    Ok(())
}

/// Two Gaussian blobs centred at `±(separation/2)·u` for a unit direction `u`
/// spread over the first few coordinates. Returns the dataset and `u`, the
/// normal of the generating hyperplane.
pub fn synthetic_blobs(
    points: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> (Dataset, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = dim.min(3);
    let dir = DVector::from_fn(dim, |j, _| {
        if j < active {
            1.0 / (active as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut features = DMatrix::zeros(points, dim);
    let mut labels = Vec::with_capacity(points);
    for r in 0..points {
        let label = (r % 2) as f64;
        let sign = 2.0 * label - 1.0;
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[(r, j)] = z + sign * 0.5 * separation * dir[j];
        }
        labels.push(label);
    }
    (Dataset { features, labels }, dir)
}
