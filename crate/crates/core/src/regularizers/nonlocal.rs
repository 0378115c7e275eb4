//! Nonlocal-means weight operator `W`.
//!
//! For pixel `i`, every other pixel `j` in the `L x L` search window (clipped at
//! the image border) gets the raw similarity
//!
//! ```text
//! s_ij = exp(-||patch(j) - patch(i)||^2 / h^2)
//! ```
//!
//! where patches are `b_s x b_s` blocks taken from a symmetrically mirrored
//! image, and the distance is the plain (unnormalized) squared l2 norm. Row `i`
//! of `W` holds `s_ij / sum_j s_ij`. By default the pixel is not its own
//! neighbor and `W` has a zero diagonal; [`SelfWeight`] selects the other
//! common conventions.
//!
//! A zero diagonal makes `W` close to a permutation on textured content, with
//! eigenvalues near `-1`. The solver's `x` update damps the multiplier `gamma`
//! by `2 alpha (I - W) / (theta + 2 alpha)`, which then has spectral radius near
//! `2` at the default `alpha = 16, theta = 2`, so the solver defaults to
//! [`SelfWeight::MaxNeighbor`] (the usual NL-means choice), which keeps the
//! spectrum of `W` away from `-1`.
//!
//! With small `h` the raw similarities underflow, so rows are normalized in the
//! shifted form `exp(-(d_ij - d_min) / h^2)`, which is the same ratio. Weights that
//! still underflow to zero are dropped from the row.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// How the pixel itself enters its own row of `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfWeight {
    /// Structurally absent: `W` has a zero diagonal.
    #[default]
    Excluded,
    /// The pixel is a candidate like any other, with raw similarity `exp(0) = 1`.
    Kernel,
    /// The pixel gets the largest raw similarity among its neighbors.
    MaxNeighbor,
}

impl SelfWeight {
    pub fn as_str(self) -> &'static str {
        match self {
            SelfWeight::Excluded => "excluded",
            SelfWeight::Kernel => "kernel",
            SelfWeight::MaxNeighbor => "max-neighbor",
        }
    }
}

impl std::fmt::Display for SelfWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SelfWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excluded" => Ok(SelfWeight::Excluded),
            "kernel" => Ok(SelfWeight::Kernel),
            "max-neighbor" => Ok(SelfWeight::MaxNeighbor),
            other => Err(Error::InvalidParameter(format!(
                "self weight must be excluded, kernel or max-neighbor, got {other:?}"
            ))),
        }
    }
}

/// Patch side `b_s`, search window side `L`, kernel width `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmParams {
    pub patch: usize,
    pub window: usize,
    pub h: f64,
    pub self_weight: SelfWeight,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            patch: 7,
            window: 13,
            h: 0.03,
            self_weight: SelfWeight::Excluded,
        }
    }
}

impl NlmParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "patch size must be odd and >= 1, got {}",
                self.patch
            )));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "search window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "h must be positive, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

/// Sparse row-stochastic weights in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalWeights {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NonlocalWeights {
    /// Builds the operator from explicit rows. Used by tests and tools; rows are
    /// taken as given.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            for (j, w) in row {
                if j >= n {
                    return Err(Error::DimensionMismatch(format!(
                        "row {i} references column {j} of an {n}-pixel operator"
                    )));
                }
                cols.push(j);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of stored weights.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Neighbor indices and weights of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "weights over {} pixels applied to length {len}",
                self.n
            )))
        }
    }

    /// `W x`, evaluated as `x_i + sum_j w_ij (x_j - x_i)` on nonempty rows so
    /// that constants are reproduced exactly despite rounding in the row sums.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        Ok((0..self.n)
            .into_par_iter()
            .map(|i| {
                let (cols, vals) = self.row(i);
                if cols.is_empty() {
                    return 0.0;
                }
                let xi = x[i];
                xi + cols
                    .iter()
                    .zip(vals)
                    .map(|(&j, &w)| w * (x[j] - xi))
                    .sum::<f64>()
            })
            .collect())
    }

    /// `||x - W x||^2`.
    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        let wx = self.apply(x)?;
        Ok(x.iter().zip(&wx).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Writes one `pixel neighbor weight` line per stored entry.
    pub fn dump_text(&self, mut out: impl Write) -> std::io::Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (j, w) in cols.iter().zip(vals) {
                writeln!(out, "{i} {j} {w:.17e}")?;
            }
        }
        Ok(())
    }
}

/// `W x`, free-function form.
pub fn apply_w(weights: &NonlocalWeights, x: &[f64]) -> Result<Vec<f64>> {
    weights.apply(x)
}

/// `||x - W x||^2`, free-function form.
pub fn nonlocal_residual(weights: &NonlocalWeights, x: &[f64]) -> Result<f64> {
    weights.residual(x)
}

#[inline]
fn mirror(k: isize, n: usize) -> usize {
    let n = n as isize;
    let m = k.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Image with a symmetric border of `pad` pixels on every side (`abc|cba`).
struct Padded {
    data: Vec<f64>,
    stride: usize,
    pad: usize,
}

impl Padded {
    fn new(u: &[f64], width: usize, height: usize, pad: usize) -> Self {
        let stride = width + 2 * pad;
        let mut data = Vec::with_capacity(stride * (height + 2 * pad));
        for r in 0..height + 2 * pad {
            let sr = mirror(r as isize - pad as isize, height);
            for c in 0..stride {
                let sc = mirror(c as isize - pad as isize, width);
                data.push(u[sr * width + sc]);
            }
        }
        Self { data, stride, pad }
    }

    /// Squared distance between the patches centred at `(r1, c1)` and `(r2, c2)`.
    fn distance_sq(&self, (r1, c1): (usize, usize), (r2, c2): (usize, usize)) -> f64 {
        let side = 2 * self.pad + 1;
        let mut acc = 0.0;
        for dr in 0..side {
            let a = &self.data[(r1 + dr) * self.stride + c1..][..side];
            let b = &self.data[(r2 + dr) * self.stride + c2..][..side];
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                acc += d * d;
            }
        }
        acc
    }
}

fn check_grid(u: &[f64], width: usize, height: usize) -> Result<()> {
    if width * height != u.len() || u.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} grid vs signal of length {}",
            u.len()
        )));
    }
    Ok(())
}

/// Squared l2 distance between the mirrored patches around pixels `i` and `j`.
pub fn patch_distance_sq(
    u: &[f64],
    width: usize,
    height: usize,
    patch: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    check_grid(u, width, height)?;
    let padded = Padded::new(u, width, height, patch / 2);
    Ok(padded.distance_sq((i / width, i % width), (j / width, j % width)))
}

/// Unnormalized similarity `exp(-||patch(j) - patch(i)||^2 / h^2)`.
pub fn raw_similarity(
    u: &[f64],
    width: usize,
    height: usize,
    params: &NlmParams,
    i: usize,
    j: usize,
) -> Result<f64> {
    params.validate()?;
    let d = patch_distance_sq(u, width, height, params.patch, i, j)?;
    Ok((-d / (params.h * params.h)).exp())
}

/// Builds `W` from the current image estimate. With `top_k`, only the `k` most
/// similar neighbors of each pixel are kept (ties broken by index) before
/// normalization.
pub fn compute_weights(
    u: &[f64],
    width: usize,
    height: usize,
    params: &NlmParams,
    top_k: Option<usize>,
) -> Result<NonlocalWeights> {
    params.validate()?;
    check_grid(u, width, height)?;
    if top_k == Some(0) {
        return Err(Error::InvalidParameter("top_k must be >= 1".into()));
    }
    let padded = Padded::new(u, width, height, params.patch / 2);
    let radius = params.window / 2;
    let inv_h2 = 1.0 / (params.h * params.h);

    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..width * height)
        .into_par_iter()
        .map_init(Vec::new, |cand: &mut Vec<(f64, usize)>, i| {
            let (r, c) = (i / width, i % width);
            cand.clear();
            for rj in r.saturating_sub(radius)..=(r + radius).min(height - 1) {
                for cj in c.saturating_sub(radius)..=(c + radius).min(width - 1) {
                    let j = rj * width + cj;
                    if j != i {
                        cand.push((padded.distance_sq((r, c), (rj, cj)), j));
                    }
                }
            }
            if let Some(k) = top_k {
                if cand.len() > k {
                    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    cand.truncate(k);
                    cand.sort_by_key(|&(_, j)| j);
                }
            }
            match params.self_weight {
                SelfWeight::Excluded => {}
                SelfWeight::Kernel => cand.push((0.0, i)),
                SelfWeight::MaxNeighbor => {
                    let best = cand.iter().map(|&(d, _)| d).fold(f64::INFINITY, f64::min);
                    cand.push((if best.is_finite() { best } else { 0.0 }, i));
                }
            }
            if params.self_weight != SelfWeight::Excluded {
                cand.sort_by_key(|&(_, j)| j);
            }
            let d_min = cand.iter().map(|&(d, _)| d).fold(f64::INFINITY, f64::min);
            let sims: Vec<f64> = cand
                .iter()
                .map(|&(d, _)| (-(d - d_min) * inv_h2).exp())
                .collect();
            let total: f64 = sims.iter().sum();
            let (mut cols, mut vals) = (
                Vec::with_capacity(cand.len()),
                Vec::with_capacity(cand.len()),
            );
            for (&(_, j), s) in cand.iter().zip(sims) {
                let w = s / total;
                if w > 0.0 {
                    cols.push(j);
                    vals.push(w);
                }
            }
            (cols, vals)
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    row_ptr.push(0);
    let nnz = rows.iter().map(|(c, _)| c.len()).sum();
    let (mut cols, mut vals) = (Vec::with_capacity(nnz), Vec::with_capacity(nnz));
    for (c, v) in rows {
        cols.extend(c);
        vals.extend(v);
        row_ptr.push(cols.len());
    }
    Ok(NonlocalWeights {
        n: width * height,
        row_ptr,
        cols,
        vals,
    })
}
