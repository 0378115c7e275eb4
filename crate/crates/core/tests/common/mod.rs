//! Independent oracles shared by the acceptance suite and the integration tests.
//! Each returns the measured quantity; callers decide the threshold.

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvnlr::image_io::{crop, load_image, Image};
use tvnlr::regularizers::{
    apply_d, apply_dt, compute_weights, raw_similarity, DifferenceField, NlmParams, NonlocalWeights,
};
use tvnlr::sensing::{build_operator, MeasurementOperator};
use tvnlr::solver::{
    augmented_lagrangian_value, optimal_step, shrink, u_gradient, u_objective, u_step, x_step,
    Problem, SolverParams, SolverState,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
}

pub const TEST_IMAGES: [&str; 3] = ["camera64", "astronaut64", "brick64"];

pub fn test_image(name: &str) -> Image {
    load_image(data_dir().join(format!("{name}.pgm"))).expect("test image")
}

/// Central `size x size` block of a test image.
pub fn center_crop(name: &str, size: usize) -> Image {
    let img = test_image(name);
    let x0 = (img.width() - size) / 2;
    let y0 = (img.height() - size) / 2;
    crop(&img, x0, y0, size, size).unwrap()
}

/// A random operator and measurement vector for a `width x height` image.
pub struct Fixture {
    pub a: MeasurementOperator,
    pub b: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl Fixture {
    pub fn random(rng: &mut ChaCha8Rng, width: usize, height: usize, m: usize) -> Self {
        let a = build_operator(m, width * height, rng.random()).unwrap();
        let b = uniform(rng, m, -1.0, 1.0);
        Self {
            a,
            b,
            width,
            height,
        }
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem::new(&self.a, &self.b, self.width, self.height).unwrap()
    }
}

fn random_field(rng: &mut ChaCha8Rng, width: usize, height: usize, scale: f64) -> DifferenceField {
    let mut f = DifferenceField::zeros(width, height);
    f.values_mut()
        .for_each(|v| *v = rng.random_range(-scale..scale));
    f
}

/// Every variable of the state drawn at random.
pub fn random_state(rng: &mut ChaCha8Rng, problem: &Problem) -> SolverState {
    let (w, h, n) = (problem.width, problem.height, problem.n());
    let mut s = SolverState::zeros(problem);
    s.u = uniform(rng, n, 0.0, 1.0);
    s.w = random_field(rng, w, h, 0.5);
    s.x = uniform(rng, n, 0.0, 1.0);
    s.v = random_field(rng, w, h, 0.5);
    s.gamma = uniform(rng, n, -0.5, 0.5);
    s.lambda = uniform(rng, problem.b().len(), -0.5, 0.5);
    s
}

/// Minimizes a 1-D function by repeatedly zooming a uniform grid around its
/// best point until the spacing drops below `resolution`.
pub fn grid_minimize(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, resolution: f64) -> f64 {
    const POINTS: usize = 2001;
    loop {
        let step = (hi - lo) / (POINTS - 1) as f64;
        let (mut best, mut best_val) = (lo, f64::INFINITY);
        for k in 0..POINTS {
            let x = lo + k as f64 * step;
            let v = f(x);
            if v < best_val {
                best = x;
                best_val = v;
            }
        }
        if step < resolution {
            return best;
        }
        lo = best - step;
        hi = best + step;
    }
}

/// Largest relative deviation from `<Au, y> = <u, A^T y>` and the number of draws.
pub fn operator_adjoint_error(seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut draws = 0;
    for &(m, n) in &[(5, 16), (12, 30), (40, 64), (1, 9), (100, 100)] {
        let a = build_operator(m, n, rng.random()).unwrap();
        for _ in 0..25 {
            let u = uniform(&mut rng, n, -1.0, 1.0);
            let y = uniform(&mut rng, m, -1.0, 1.0);
            let lhs = dot(&a.forward(&u).unwrap(), &y);
            let rhs = dot(&u, &a.adjoint(&y).unwrap());
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
            draws += 1;
        }
    }
    (worst, draws)
}

/// Same for `D`.
pub fn difference_adjoint_error(seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut draws = 0;
    for &(w, h) in &[(5, 7), (1, 9), (16, 3), (12, 12), (31, 17)] {
        for _ in 0..25 {
            let u = uniform(&mut rng, w * h, -1.0, 1.0);
            let f = random_field(&mut rng, w, h, 1.0);
            let lhs = apply_d(&u, w, h).unwrap().dot(&f);
            let rhs = dot(&u, &apply_dt(&f).unwrap());
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
            draws += 1;
        }
    }
    (worst, draws)
}

/// `D` maps constant images to exactly zero.
pub fn difference_kills_constants() -> bool {
    [(7, 5, 0.3), (1, 4, -2.5), (16, 16, 1e6), (3, 1, 0.1)]
        .iter()
        .all(|&(w, h, c)| {
            apply_d(&vec![c; w * h], w, h)
                .unwrap()
                .values()
                .all(|v| v == 0.0)
        })
}

/// Worst distance between `shrink` and the grid-search minimizer of
/// `|w| - v (t - w) + beta/2 (t - w)^2` over random `(t, v, beta)` triples.
pub fn shrink_grid_error(seed: u64, count: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let t = rng.random_range(-2.0..2.0);
        let v = rng.random_range(-2.0..2.0);
        let beta = rng.random_range(0.5..64.0);
        let mut tf = DifferenceField::zeros(1, 1);
        let mut vf = DifferenceField::zeros(1, 1);
        tf.dv[0] = t;
        vf.dv[0] = v;
        let got = shrink(&tf, &vf, beta).unwrap().dv[0];
        let obj = |w: f64| w.abs() - v * (t - w) + 0.5 * beta * (t - w) * (t - w);
        let expect = grid_minimize(obj, -8.0, 8.0, 1e-9);
        worst = worst.max((got - expect).abs());
    }
    worst
}

/// Worst relative error between `u_gradient` and central differences of the
/// `u` sub-objective on random 4x4 states with six measurements.
pub fn gradient_fd_error(seed: u64, states: usize) -> f64 {
    let mut rng = rng(seed);
    let params = SolverParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let fx = Fixture::random(&mut rng, 4, 4, 6);
        let problem = fx.problem();
        let state = random_state(&mut rng, &problem);
        let g = u_gradient(&state, &problem, &params).unwrap();
        let step = 1e-6;
        let fd: Vec<f64> = (0..16)
            .map(|k| {
                let mut up = state.u.clone();
                let mut dn = state.u.clone();
                up[k] += step;
                dn[k] -= step;
                let fp = u_objective(&up, &state, &problem, &params).unwrap();
                let fm = u_objective(&dn, &state, &problem, &params).unwrap();
                (fp - fm) / (2.0 * step)
            })
            .collect();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&g));
    }
    worst
}

pub struct StepReport {
    /// Largest `phi(eta) - min_grid phi`, relative to `max(1, |phi(eta)|)`.
    pub worst_excess: f64,
    /// Largest `|<d_new, d>| / (|d| |d_new|)`.
    pub worst_cosine: f64,
}

/// Exact line search versus a 10^4-point grid on `[0, 4 eta]`, plus the
/// orthogonality of consecutive gradients.
pub fn step_optimality(seed: u64, states: usize) -> StepReport {
    let mut rng = rng(seed);
    let params = SolverParams::default();
    let mut report = StepReport {
        worst_excess: f64::NEG_INFINITY,
        worst_cosine: 0.0,
    };
    for _ in 0..states {
        let fx = Fixture::random(&mut rng, 4, 4, 6);
        let problem = fx.problem();
        let state = random_state(&mut rng, &problem);
        let d = u_gradient(&state, &problem, &params).unwrap();
        let eta = optimal_step(&d, &problem, params.beta, params.theta, params.mu).unwrap();
        let phi = |s: f64| {
            let u: Vec<f64> = state.u.iter().zip(&d).map(|(u, g)| u - s * g).collect();
            u_objective(&u, &state, &problem, &params).unwrap()
        };
        let at_eta = phi(eta);
        let grid_min = (0..10_000)
            .map(|k| phi(4.0 * eta * k as f64 / 9_999.0))
            .fold(f64::INFINITY, f64::min);
        let excess = (at_eta - grid_min) / at_eta.abs().max(1.0);
        report.worst_excess = report.worst_excess.max(excess);

        let mut next = state.clone();
        u_step(&mut next, &problem, &params).unwrap();
        let d_new = u_gradient(&next, &problem, &params).unwrap();
        let cos = dot(&d_new, &d).abs() / (norm(&d) * norm(&d_new));
        report.worst_cosine = report.worst_cosine.max(cos);
    }
    report
}

/// `W r` from the stored rows, by plain summation.
pub fn dense_apply(w: &NonlocalWeights, r: &[f64]) -> Vec<f64> {
    (0..w.len())
        .map(|i| {
            let (cols, vals) = w.row(i);
            cols.iter().zip(vals).map(|(&j, &v)| v * r[j]).sum()
        })
        .collect()
}

pub fn dense_matrix(w: &NonlocalWeights) -> DMatrix<f64> {
    let n = w.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = w.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            m[(i, j)] = v;
        }
    }
    m
}

pub struct XStepReport {
    /// Infinity norm of `theta (x - r) + 2 alpha (x - W r)` at the returned `x`.
    pub surrogate_gradient: f64,
    pub alpha_zero_bit_exact: bool,
    /// `|x_surrogate - x_exact| / |x_exact|` against the dense solve.
    pub gap_rel: f64,
    /// Exact objective at the surrogate minus at the exact minimizer, relative.
    pub objective_gap_rel: f64,
    pub n: usize,
}

/// Exactness of the closed-form `x` update for its surrogate objective and its
/// distance from the exact minimizer of
/// `theta/2 |x - r|^2 + alpha |(I - W) x|^2` on a 16x16 image.
pub fn x_step_report(seed: u64, nlm: &NlmParams) -> XStepReport {
    let mut rng = rng(seed);
    let (theta, alpha) = (2.0, 16.0);
    let img = center_crop("camera64", 16);
    let n = img.len();
    let weights = compute_weights(img.data(), 16, 16, nlm, None).unwrap();
    let u: Vec<f64> = img
        .data()
        .iter()
        .map(|v| v + rng.random_range(-0.02..0.02))
        .collect();
    let gamma = uniform(&mut rng, n, -0.05, 0.05);
    let r: Vec<f64> = u.iter().zip(&gamma).map(|(u, g)| u - g / theta).collect();

    let x = x_step(&u, &gamma, theta, alpha, Some(&weights)).unwrap();
    let wr = dense_apply(&weights, &r);
    let surrogate_gradient = x
        .iter()
        .zip(&r)
        .zip(&wr)
        .map(|((x, r), wr)| (theta * (x - r) + 2.0 * alpha * (x - wr)).abs())
        .fold(0.0, f64::max);

    let x0 = x_step(&u, &gamma, theta, 0.0, Some(&weights)).unwrap();
    let alpha_zero_bit_exact = x0.iter().zip(&r).all(|(a, b)| a.to_bits() == b.to_bits());

    let wm = dense_matrix(&weights);
    let iw = DMatrix::identity(n, n) - &wm;
    let lhs = DMatrix::identity(n, n) * theta + iw.transpose() * &iw * (2.0 * alpha);
    let rhs = DVector::from_vec(r.clone()) * theta;
    let exact = lhs.cholesky().expect("SPD system").solve(&rhs);
    let xs = DVector::from_vec(x.clone());
    let objective = |x: &DVector<f64>| {
        let rv = DVector::from_vec(r.clone());
        0.5 * theta * (x - &rv).norm_squared() + alpha * (&iw * x).norm_squared()
    };
    XStepReport {
        surrogate_gradient,
        alpha_zero_bit_exact,
        gap_rel: (&xs - &exact).norm() / exact.norm(),
        objective_gap_rel: (objective(&xs) - objective(&exact)) / objective(&exact),
        n,
    }
}

pub struct WReport {
    pub max_row_sum_error: f64,
    pub diagonal_entries: usize,
    pub min_weight: f64,
    pub max_weight: f64,
    pub max_neighbors: usize,
    pub constant_fixed_point: bool,
    pub max_symmetry_error: f64,
    pub symmetric_pairs: usize,
}

/// Structural checks of `W` on a 32x32 crop.
pub fn w_report(nlm: &NlmParams) -> WReport {
    let img = center_crop("camera64", 32);
    let (wd, ht) = (32, 32);
    let w = compute_weights(img.data(), wd, ht, nlm, None).unwrap();
    let mut rep = WReport {
        max_row_sum_error: 0.0,
        diagonal_entries: 0,
        min_weight: f64::INFINITY,
        max_weight: 0.0,
        max_neighbors: 0,
        constant_fixed_point: false,
        max_symmetry_error: 0.0,
        symmetric_pairs: 0,
    };
    for i in 0..w.len() {
        let (cols, vals) = w.row(i);
        let s: f64 = vals.iter().sum();
        rep.max_row_sum_error = rep.max_row_sum_error.max((s - 1.0).abs());
        rep.diagonal_entries += cols.iter().filter(|&&j| j == i).count();
        rep.max_neighbors = rep.max_neighbors.max(cols.len());
        for &v in vals {
            rep.min_weight = rep.min_weight.min(v);
            rep.max_weight = rep.max_weight.max(v);
        }
    }
    let c = vec![0.375; wd * ht];
    let wc = compute_weights(&c, wd, ht, nlm, None).unwrap();
    rep.constant_fixed_point = wc.apply(&c).unwrap() == c;

    // raw similarities between pixels whose patches lie fully inside the image
    let half = nlm.patch / 2;
    let radius = nlm.window / 2;
    let interior = |r: usize, c: usize| r >= half && c >= half && r + half < ht && c + half < wd;
    let data = img.data();
    for r in 0..ht {
        for c in 0..wd {
            if !interior(r, c) {
                continue;
            }
            for rj in r.saturating_sub(radius)..=(r + radius).min(ht - 1) {
                for cj in c.saturating_sub(radius)..=(c + radius).min(wd - 1) {
                    if !interior(rj, cj) || (rj, cj) == (r, c) {
                        continue;
                    }
                    let (i, j) = (r * wd + c, rj * wd + cj);
                    let sij = raw_similarity(data, wd, ht, nlm, i, j).unwrap();
                    let sji = raw_similarity(data, wd, ht, nlm, j, i).unwrap();
                    rep.max_symmetry_error = rep.max_symmetry_error.max((sij - sji).abs());
                    rep.symmetric_pairs += 1;
                }
            }
        }
    }
    rep
}

/// Largest increase of the augmented Lagrangian across a `w` or `u` sub-step
/// with `W`, `x` and the multipliers frozen, over `problems` random 8x8
/// problems and `iters` passes each.
pub fn frozen_descent_increase(seed: u64, problems: usize, iters: usize) -> (f64, usize) {
    let mut rng = rng(seed);
    let params = SolverParams {
        nlm: NlmParams {
            patch: 3,
            window: 5,
            h: 0.3,
            ..SolverParams::default().nlm
        },
        ..SolverParams::default()
    };
    let mut worst = f64::NEG_INFINITY;
    let mut substeps = 0;
    for _ in 0..problems {
        let fx = Fixture::random(&mut rng, 8, 8, 24);
        let problem = Problem::normalized(&fx.a, &fx.b, 8, 8).unwrap();
        let mut state = random_state(&mut rng, &problem);
        state.weights = Some(compute_weights(&state.x, 8, 8, &params.nlm, None).unwrap());
        for _ in 0..iters {
            let l0 = augmented_lagrangian_value(&state, &problem, &params).unwrap();
            let du = apply_d(&state.u, 8, 8).unwrap();
            state.w = shrink(&du, &state.v, params.beta).unwrap();
            let l1 = augmented_lagrangian_value(&state, &problem, &params).unwrap();
            u_step(&mut state, &problem, &params).unwrap();
            let l2 = augmented_lagrangian_value(&state, &problem, &params).unwrap();
            worst = worst.max(l1 - l0).max(l2 - l1);
            substeps += 2;
        }
    }
    (worst, substeps)
}
