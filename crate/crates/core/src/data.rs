//! Datasets of box-constrained input samples.
//!
//! Samples live in `[0,1]^d` with an integer class label (0-based). Datasets
//! persist either as CSV (`x_0,...,x_{d-1},label`) or as a compact binary
//! layout; loading sniffs the format from the file contents.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// One labeled input point.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// An ordered collection of samples sharing one input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<InputSample>,
}

const BINARY_MAGIC: &[u8; 8] = b"HOFMNDS1";

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset {
            dim,
            samples: Vec::new(),
        }
    }

    pub fn from_samples(samples: Vec<InputSample>) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.x.len())
            .ok_or_else(|| Error::invalid("dataset must contain at least one sample"))?;
        let mut ds = Dataset::new(dim);
        for s in samples {
            ds.push(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, sample: InputSample) -> Result<()> {
        if sample.x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: sample.x.len(),
            });
        }
        if sample.x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("sample component outside [0,1]"));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[InputSample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, InputSample> {
        self.samples.iter()
    }

    /// Number of distinct classes, assuming labels are contiguous from 0.
    pub fn class_count(&self) -> usize {
        self.samples.iter().map(|s| s.y + 1).max().unwrap_or(0)
    }

    /// Split off the first `n` samples; the remainder stays in order.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.samples.len());
        let head = Dataset {
            dim: self.dim,
            samples: self.samples[..n].to_vec(),
        };
        let tail = Dataset {
            dim: self.dim,
            samples: self.samples[n..].to_vec(),
        };
        (head, tail)
    }

    /// First `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        self.split_at(n).0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("x_{i}")).collect();
        writeln!(w, "{},label", header.join(","))?;
        for s in &self.samples {
            let xs: Vec<String> = s.x.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{}", xs.join(","), s.y)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let cols = header.split(',').count();
        if cols < 2 || !header.trim_end().ends_with("label") {
            return Err(Error::Parse("dataset CSV header must be x_0..x_{d-1},label".into()));
        }
        let dim = cols - 1;
        let mut ds = Dataset::new(dim);
        for (ln, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(Error::Parse(format!("row {} has {} fields, expected {cols}", ln + 2, fields.len())));
            }
            let mut x = Vec::with_capacity(dim);
            for f in &fields[..dim] {
                x.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?,
                );
            }
            let y = fields[dim]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("row {} label: {e}", ln + 2)))?;
            ds.push(InputSample { x, y })?;
        }
        if ds.is_empty() {
            return Err(Error::invalid("dataset contains no samples"));
        }
        Ok(ds)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for s in &self.samples {
            for v in &s.x {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(s.y as u32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("bad dataset magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut ds = Dataset::new(dim);
        for _ in 0..n {
            let mut x = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut b8)?;
                x.push(f64::from_le_bytes(b8));
            }
            r.read_exact(&mut b4)?;
            ds.push(InputSample {
                x,
                y: u32::from_le_bytes(b4) as usize,
            })?;
        }
        if ds.is_empty() {
            return Err(Error::invalid("dataset contains no samples"));
        }
        Ok(ds)
    }

    /// Load from disk, sniffing binary vs CSV from the leading bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Dataset::read_binary(&bytes[..])
        } else {
            Dataset::read_csv(&bytes[..])
        }
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Concentric rings around (0.5, 0.5), one class per ring, innermost first.
pub fn make_rings(n: usize, classes: usize, noise: f64, seed: u64) -> Dataset {
    assert!(classes >= 2, "rings need at least two classes");
    let mut rng = seed::rng(seed::derive(seed, "rings"));
    let mut ds = Dataset::new(2);
    for i in 0..n {
        let class = i % classes;
        let base_r = 0.12 + 0.24 * class as f64 / (classes - 1) as f64;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = base_r + rng.random_range(-noise..noise);
        let sample = InputSample {
            x: vec![
                clamp01(0.5 + r * angle.cos()),
                clamp01(0.5 + r * angle.sin()),
            ],
            y: class,
        };
        ds.push(sample).expect("generated sample in range");
    }
    ds
}

/// Axis-aligned Gaussian blobs clipped to the unit square, one per center.
pub fn make_blobs(n: usize, centers: &[(f64, f64)], spread: f64, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed::derive(seed, "blobs"));
    let mut ds = Dataset::new(2);
    for i in 0..n {
        let class = i % centers.len();
        let (cx, cy) = centers[class];
        let dx: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let dy: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let sample = InputSample {
            x: vec![clamp01(cx + spread * dx), clamp01(cy + spread * dy)],
            y: class,
        };
        ds.push(sample).expect("generated sample in range");
    }
    ds
}
