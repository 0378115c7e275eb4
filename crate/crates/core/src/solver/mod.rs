//! TVNLR recovery: total variation plus nonlocal-means regularization under the
//! equality constraint `Au = b`.
//!
//! The problem is split as `Du = w`, `u = x`, `Au = b` with multipliers
//! `v`, `gamma`, `lambda`. Each inner pass runs, in order:
//!
//! 1. shrinkage for `w`,
//! 2. steepest descent with exact line search for `u`,
//! 3. nonlocal weights `W` rebuilt from the new `u`,
//! 4. the closed-form surrogate update for `x`.
//!
//! Multipliers are updated once per outer iteration.

mod steps;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub use steps::{
    augmented_lagrangian_value, optimal_step, shrink, soft_threshold, u_gradient, u_objective,
    u_step, update_multipliers, x_step,
};

use crate::error::{Error, Result};
use crate::image_io::{psnr_slices, Image};
use crate::norm_sq;
use crate::regularizers::{
    apply_d, compute_weights, DifferenceField, NlmParams, NonlocalWeights, SelfWeight,
};
use crate::sensing::{MeasurementOperator, Measurements};

/// Guards relative-change denominators.
pub const EPS: f64 = 1e-12;

/// Solver configuration. [`Default`] gives `mu = 128`, `theta = 2`, `beta = 32`,
/// `alpha = 16`, `b_s = 7`, `L = 13`, `h = 0.03`, with [`SelfWeight::MaxNeighbor`]
/// weights (a zero-diagonal `W` makes the multiplier `gamma` diverge at these
/// penalties; see [`crate::regularizers::nonlocal`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub beta: f64,
    pub theta: f64,
    pub mu: f64,
    /// Weight of the nonlocal term; `0` gives the TV-only baseline.
    pub alpha: f64,
    pub nlm: NlmParams,
    /// Keep only the `k` most similar neighbors per pixel when building `W`.
    pub top_k: Option<usize>,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Inner exit: `||u_new - u_old|| / max(||u_old||, EPS) < inner_tol`.
    pub inner_tol: f64,
    /// Outer exit: `||Au - b|| / ||b|| < outer_tol`.
    pub outer_tol: f64,
    pub u_steps_per_inner: usize,
    /// Rebuild `W` on every k-th inner pass (counted across outer iterations).
    pub w_update_every: usize,
    /// Solve with `A` and `b` divided by `||A||_2` (see [`Problem::normalized`]).
    pub normalize_operator: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            beta: 32.0,
            theta: 2.0,
            mu: 128.0,
            alpha: 16.0,
            nlm: NlmParams {
                self_weight: SelfWeight::MaxNeighbor,
                ..NlmParams::default()
            },
            top_k: None,
            max_outer: 12,
            max_inner: 16,
            inner_tol: 1e-3,
            outer_tol: 5e-4,
            u_steps_per_inner: 1,
            w_update_every: 1,
            normalize_operator: true,
        }
    }
}

impl SolverParams {
    /// Same parameters with `alpha = 0`.
    pub fn tv_only(&self) -> Self {
        Self {
            alpha: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta", self.beta),
            ("theta", self.theta),
            ("mu", self.mu),
            ("inner_tol", self.inner_tol),
            ("outer_tol", self.outer_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        let counts = [
            ("max_outer", self.max_outer),
            ("max_inner", self.max_inner),
            ("u_steps_per_inner", self.u_steps_per_inner),
            ("w_update_every", self.w_update_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if self.top_k == Some(0) {
            return Err(Error::InvalidParameter("top_k must be >= 1".into()));
        }
        self.nlm.validate()
    }
}

/// The fixed data of a solve: operator, measurements and image shape.
///
/// The solver may work with the rescaled pair `(A / s, b / s)`. The constraint
/// set `Au = b` and every relative residual are unchanged by the scale; only the
/// balance between the data penalty and the other terms of the Lagrangian moves.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    a: &'a MeasurementOperator,
    scale: f64,
    b: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl<'a> Problem<'a> {
    /// Uses `A` and `b` as given.
    pub fn new(a: &'a MeasurementOperator, b: &[f64], width: usize, height: usize) -> Result<Self> {
        Self::with_scale(a, b, width, height, 1.0)
    }

    /// Divides `A` and `b` by the spectral norm of `A`, so that `||A / s||_2 = 1`.
    pub fn normalized(
        a: &'a MeasurementOperator,
        b: &[f64],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        Self::with_scale(a, b, width, height, spectral_norm(a)?)
    }

    pub fn with_scale(
        a: &'a MeasurementOperator,
        b: &[f64],
        width: usize,
        height: usize,
        scale: f64,
    ) -> Result<Self> {
        if a.rows() != b.len() || a.cols() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "operator {}x{} vs {} measurements of a {width}x{height} image",
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "operator scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            a,
            scale,
            b: b.iter().map(|v| v / scale).collect(),
            width,
            height,
        })
    }

    pub fn n(&self) -> usize {
        self.width * self.height
    }

    /// The divisor applied to `A` and `b`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Measurements as seen by the solver, `b / s`.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `(A / s) u`.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.a.forward(u)?;
        if self.scale != 1.0 {
            out.iter_mut().for_each(|v| *v /= self.scale);
        }
        Ok(out)
    }

    /// `(A / s)^T y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.a.adjoint(y)?;
        if self.scale != 1.0 {
            out.iter_mut().for_each(|v| *v /= self.scale);
        }
        Ok(out)
    }

    /// `||Au - b|| / ||b||`.
    pub fn relative_residual(&self, u: &[f64]) -> Result<f64> {
        let r = steps::data_residual(u, self)?;
        Ok(norm_sq(&r).sqrt() / norm_sq(&self.b).sqrt().max(EPS))
    }
}

/// Largest singular value of `A` by power iteration on `A^T A`, started from a
/// fixed vector so the result is deterministic.
pub fn spectral_norm(a: &MeasurementOperator) -> Result<f64> {
    let n = a.cols();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 / 7.0).collect();
    let mut sigma_sq = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let norm = norm_sq(&x).sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        let y = a.adjoint(&a.forward(&x)?)?;
        let next = crate::dot(&x, &y);
        x = y;
        let done = (next - sigma_sq).abs() <= POWER_TOL * next;
        sigma_sq = next;
        if done {
            break;
        }
    }
    Ok(sigma_sq.sqrt())
}

const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-6;

/// Iterates, multipliers and the current nonlocal weights.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub u: Vec<f64>,
    pub w: DifferenceField,
    pub x: Vec<f64>,
    pub v: DifferenceField,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub weights: Option<NonlocalWeights>,
    pub outer_iter: usize,
    pub inner_iter: usize,
}

impl SolverState {
    /// Everything zero, including `u`.
    pub fn zeros(problem: &Problem) -> Self {
        let n = problem.n();
        Self {
            u: vec![0.0; n],
            w: DifferenceField::zeros(problem.width, problem.height),
            x: vec![0.0; n],
            v: DifferenceField::zeros(problem.width, problem.height),
            gamma: vec![0.0; n],
            lambda: vec![0.0; problem.b.len()],
            weights: None,
            outer_iter: 0,
            inner_iter: 0,
        }
    }

    /// Starting point `u = A^T b`, all other variables zero.
    pub fn new(problem: &Problem) -> Result<Self> {
        let mut state = Self::zeros(problem);
        state.u = problem.adjoint(&problem.b)?;
        Ok(state)
    }

    pub(crate) fn check_consistent(&self, problem: &Problem) -> Result<()> {
        let n = problem.n();
        let field_ok = |f: &DifferenceField| {
            f.width == problem.width
                && f.height == problem.height
                && f.dv.len() == n
                && f.dh.len() == n
        };
        if self.u.len() != n
            || self.x.len() != n
            || self.gamma.len() != n
            || self.lambda.len() != problem.b.len()
            || !field_ok(&self.w)
            || !field_ok(&self.v)
        {
            return Err(Error::DimensionMismatch(
                "solver state does not match the problem shape".into(),
            ));
        }
        Ok(())
    }

    /// One alternating pass: `w`, `u`, optionally `W`, then `x`.
    pub fn inner_pass(&mut self, problem: &Problem, params: &SolverParams) -> Result<()> {
        let du = apply_d(&self.u, problem.width, problem.height)?;
        self.w = shrink(&du, &self.v, params.beta)?;
        u_step(self, problem, params)?;
        if params.alpha > 0.0 && self.inner_iter.is_multiple_of(params.w_update_every) {
            self.weights = Some(compute_weights(
                &self.u,
                problem.width,
                problem.height,
                &params.nlm,
                params.top_k,
            )?);
        }
        self.x = x_step(
            &self.u,
            &self.gamma,
            params.theta,
            params.alpha,
            self.weights.as_ref(),
        )?;
        self.inner_iter += 1;
        Ok(())
    }
}

/// One row of the per-inner-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    pub inner: usize,
    pub residual_rel: f64,
    pub lagrangian: f64,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    /// Final iterate clamped to `[0, 1]`.
    pub image: Image,
    /// PSNR of the unclamped iterate after each outer iteration (empty without
    /// ground truth).
    pub psnr_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    pub lagrangian_trace: Vec<f64>,
    /// Per inner pass, numbered within each outer iteration.
    pub trace: Vec<TraceRow>,
    /// PSNR of the clamped output against ground truth.
    pub final_psnr: Option<f64>,
    /// `||Au - b|| / ||b||` for the unclamped final iterate.
    pub final_residual: f64,
    /// Residual of `A^T b`, before any iteration.
    pub initial_residual: f64,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub wall_time: f64,
    /// Final unclamped iterate.
    pub u: Vec<f64>,
}

impl RecoveryResult {
    /// Writes the trace as CSV: `outer,inner,residual_rel,lagrangian,psnr`.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("outer,inner,residual_rel,lagrangian,psnr\n");
        for row in &self.trace {
            let psnr = row.psnr.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.outer, row.inner, row.residual_rel, row.lagrangian, psnr
            ));
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Recovers an image from measurements, regenerating the operator from the seed.
pub fn recover(
    meas: &Measurements,
    params: &SolverParams,
    ground_truth: Option<&Image>,
) -> Result<RecoveryResult> {
    params.validate()?;
    let a = meas.operator()?;
    recover_with_operator(&a, meas, params, ground_truth)
}

/// Same as [`recover`] with an already built operator.
pub fn recover_with_operator(
    a: &MeasurementOperator,
    meas: &Measurements,
    params: &SolverParams,
    ground_truth: Option<&Image>,
) -> Result<RecoveryResult> {
    params.validate()?;
    if a.seed() != meas.seed {
        return Err(Error::InvalidParameter(format!(
            "operator seed {} does not match measurement seed {}",
            a.seed(),
            meas.seed
        )));
    }
    let problem = if params.normalize_operator {
        Problem::normalized(a, &meas.b, meas.width, meas.height)?
    } else {
        Problem::new(a, &meas.b, meas.width, meas.height)?
    };
    if let Some(gt) = ground_truth {
        if gt.width() != meas.width || gt.height() != meas.height {
            return Err(Error::DimensionMismatch(format!(
                "ground truth is {}x{}, measurements are of a {}x{} image",
                gt.width(),
                gt.height(),
                meas.width,
                meas.height
            )));
        }
    }
    let started = Instant::now();
    let psnr_of = |u: &[f64]| ground_truth.map(|gt| psnr_slices(gt.data(), u));

    let mut state = SolverState::new(&problem)?;
    let initial_residual = problem.relative_residual(&state.u)?;
    let mut psnr_trace = Vec::new();
    let mut residual_trace = Vec::new();
    let mut lagrangian_trace = Vec::new();
    let mut trace = Vec::new();
    let mut residual = initial_residual;

    for outer in 0..params.max_outer {
        for inner in 0..params.max_inner {
            let u_old = state.u.clone();
            state.inner_pass(&problem, params)?;
            trace.push(TraceRow {
                outer,
                inner,
                residual_rel: problem.relative_residual(&state.u)?,
                lagrangian: augmented_lagrangian_value(&state, &problem, params)?,
                psnr: psnr_of(&state.u),
            });
            let change: f64 = state
                .u
                .iter()
                .zip(&u_old)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if change / norm_sq(&u_old).sqrt().max(EPS) < params.inner_tol {
                break;
            }
        }
        update_multipliers(&mut state, &problem, params)?;
        state.outer_iter += 1;

        residual = problem.relative_residual(&state.u)?;
        residual_trace.push(residual);
        lagrangian_trace.push(augmented_lagrangian_value(&state, &problem, params)?);
        if let Some(p) = psnr_of(&state.u) {
            psnr_trace.push(p);
        }
        if residual < params.outer_tol {
            break;
        }
    }

    let image = Image::from_clamped(meas.width, meas.height, &state.u)?;
    let final_psnr = ground_truth.map(|gt| psnr_slices(gt.data(), image.data()));
    Ok(RecoveryResult {
        image,
        psnr_trace,
        residual_trace,
        lagrangian_trace,
        trace,
        final_psnr,
        final_residual: residual,
        initial_residual,
        outer_iters: state.outer_iter,
        inner_iters_total: state.inner_iter,
        wall_time: started.elapsed().as_secs_f64(),
        u: state.u,
    })
}
