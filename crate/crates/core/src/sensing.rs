//! Dense Gaussian random sensing.
//!
//! Entries of `A` are i.i.d. standard normal draws. The stream is a ChaCha8
//! generator seeded with [`rand::SeedableRng::seed_from_u64`], sampled through
//! `rand_distr::StandardNormal` in row-major order. Both are portable, so the same
//! `(M, N, seed)` reproduces `A` bit for bit on any platform.
//!
//! Matrix-vector products accumulate in a fixed order per output element, so the
//! results do not depend on the rayon thread count.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_io::Image;

/// Magic bytes opening a measurements file.
pub const MEASUREMENTS_MAGIC: &[u8; 8] = b"TVNLRB1\0";

/// Column block width used by the adjoint product.
const ADJOINT_BLOCK: usize = 256;

/// Seeded dense `M x N` Gaussian projection.
#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    rows: usize,
    cols: usize,
    seed: u64,
    entries: Vec<f64>,
}

impl MeasurementOperator {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    /// `A u`.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "forward expects length {}, got {}",
                self.cols,
                u.len()
            )));
        }
        Ok(self
            .entries
            .par_chunks(self.cols)
            .map(|row| crate::dot(row, u))
            .collect())
    }

    /// `A^T y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "adjoint expects length {}, got {}",
                self.rows,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        // each output column accumulates over rows 0..M in order
        out.par_chunks_mut(ADJOINT_BLOCK)
            .enumerate()
            .for_each(|(blk, acc)| {
                let c0 = blk * ADJOINT_BLOCK;
                for (i, &yi) in y.iter().enumerate() {
                    let row = &self.entries[i * self.cols + c0..i * self.cols + c0 + acc.len()];
                    for (a, &r) in acc.iter_mut().zip(row) {
                        *a += r * yi;
                    }
                }
            });
        Ok(out)
    }
}

/// Draws the `M x N` operator for `seed`.
pub fn build_operator(rows: usize, cols: usize, seed: u64) -> Result<MeasurementOperator> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter(format!(
            "operator dimensions must be nonzero, got {rows}x{cols}"
        )));
    }
    if rows > cols {
        return Err(Error::InvalidParameter(format!(
            "operator must have M <= N, got M={rows} N={cols}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(MeasurementOperator {
        rows,
        cols,
        seed,
        entries,
    })
}

/// Number of measurements for a ratio, `round(ratio * n)`.
pub fn measurement_count(ratio: f64, n: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let m = (ratio * n as f64).round() as usize;
    if m == 0 {
        return Err(Error::InvalidParameter(format!(
            "ratio {ratio} yields zero measurements for N={n}"
        )));
    }
    Ok(m)
}

/// Measurement vector `b = A u` plus everything needed to regenerate `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub b: Vec<f64>,
    pub seed: u64,
    pub n: usize,
    pub width: usize,
    pub height: usize,
}

impl Measurements {
    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// `M / N`.
    pub fn ratio(&self) -> f64 {
        self.b.len() as f64 / self.n as f64
    }

    /// Regenerates the operator that produced `b`.
    pub fn operator(&self) -> Result<MeasurementOperator> {
        build_operator(self.m(), self.n, self.seed)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 5 * 8 + self.b.len() * 8);
        out.extend_from_slice(MEASUREMENTS_MAGIC);
        for field in [
            self.m() as u64,
            self.n as u64,
            self.width as u64,
            self.height as u64,
            self.seed,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for v in &self.b {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptMeasurements(msg.to_string());
        if bytes.len() < 48 || &bytes[..8] != MEASUREMENTS_MAGIC {
            return Err(corrupt("missing TVNLRB1 header"));
        }
        let u64_at = |i: usize| {
            let off = 8 + 8 * i;
            u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
        };
        let (m, n, width, height, seed) = (u64_at(0), u64_at(1), u64_at(2), u64_at(3), u64_at(4));
        let to_usize = |v: u64| usize::try_from(v).map_err(|_| corrupt("field overflows usize"));
        let (m, n, width, height) = (
            to_usize(m)?,
            to_usize(n)?,
            to_usize(width)?,
            to_usize(height)?,
        );
        if m == 0 || m > n || width.checked_mul(height) != Some(n) {
            return Err(corrupt(&format!(
                "inconsistent shape M={m} N={n} width={width} height={height}"
            )));
        }
        let payload = &bytes[48..];
        if payload.len() != m * 8 {
            return Err(corrupt(&format!(
                "expected {} bytes of measurements, found {}",
                m * 8,
                payload.len()
            )));
        }
        let b = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            b,
            seed,
            n,
            width,
            height,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Measures an image at the given ratio. Returns the measurements and the
/// operator, since callers usually need both.
pub fn sense_with_operator(
    img: &Image,
    ratio: f64,
    seed: u64,
) -> Result<(Measurements, MeasurementOperator)> {
    let n = img.len();
    let m = measurement_count(ratio, n)?;
    let a = build_operator(m, n, seed)?;
    let b = a.forward(img.data())?;
    Ok((
        Measurements {
            b,
            seed,
            n,
            width: img.width(),
            height: img.height(),
        },
        a,
    ))
}

pub fn sense(img: &Image, ratio: f64, seed: u64) -> Result<Measurements> {
    sense_with_operator(img, ratio, seed).map(|(m, _)| m)
}
