//! Anisotropic forward differences `D = [D_v; D_h]` and the exact adjoint.
//!
//! Forward differences with a replicate (Neumann) boundary: `dv` is zero on the
//! last row and `dh` on the last column, so `D` annihilates constants and `D^T`
//! stays a local negative divergence.

use crate::error::{Error, Result};

/// Vertical/horizontal difference pair on a `width x height` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceField {
    pub dv: Vec<f64>,
    pub dh: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl DifferenceField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            dv: vec![0.0; n],
            dh: vec![0.0; n],
            width,
            height,
        }
    }

    /// Number of pixels (each component has this length).
    pub fn len(&self) -> usize {
        self.dv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dv.is_empty()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.dv.len() == other.dv.len()
            && self.dh.len() == other.dh.len()
    }

    pub(crate) fn check_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} field vs {}x{} field",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Elementwise combination of two equally shaped fields.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.same_shape(other));
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        Self {
            dv: zip(&self.dv, &other.dv),
            dh: zip(&self.dh, &other.dh),
            width: self.width,
            height: self.height,
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.dv.iter().chain(&self.dh).copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.dv.iter_mut().chain(self.dh.iter_mut())
    }

    pub fn l1_norm(&self) -> f64 {
        self.values().map(f64::abs).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }
}

/// `D u`.
pub fn apply_d(u: &[f64], width: usize, height: usize) -> Result<DifferenceField> {
    if width * height != u.len() || u.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "apply_d: {width}x{height} grid vs signal of length {}",
            u.len()
        )));
    }
    let mut f = DifferenceField::zeros(width, height);
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if r + 1 < height {
                f.dv[i] = u[i + width] - u[i];
            }
            if c + 1 < width {
                f.dh[i] = u[i + 1] - u[i];
            }
        }
    }
    Ok(f)
}

/// `D^T f`. Entries of `f` on the last row of `dv` / last column of `dh` are
/// outside the range of `D` and do not contribute.
pub fn apply_dt(f: &DifferenceField) -> Result<Vec<f64>> {
    let (width, height) = (f.width, f.height);
    let n = width * height;
    if n == 0 || f.dv.len() != n || f.dh.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "apply_dt: {width}x{height} field with component lengths {}/{}",
            f.dv.len(),
            f.dh.len()
        )));
    }
    let mut out = vec![0.0; n];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let mut acc = 0.0;
            if r + 1 < height {
                acc -= f.dv[i];
            }
            if r > 0 {
                acc += f.dv[i - width];
            }
            if c + 1 < width {
                acc -= f.dh[i];
            }
            if c > 0 {
                acc += f.dh[i - 1];
            }
            out[i] = acc;
        }
    }
    Ok(out)
}
