//! The individual updates of one alternating pass, plus the augmented
//! Lagrangian they descend on:
//!
//! ```text
//! L(w, u, x) = ||w||_1 - v'(Du - w) + beta/2 ||Du - w||^2
//!            + alpha ||x - Wx||^2 - gamma'(u - x) + theta/2 ||u - x||^2
//!            + mu/2 ||Au - b||^2 - lambda'(Au - b)
//! ```

use crate::error::{Error, Result};
use crate::regularizers::{apply_d, apply_dt, DifferenceField, NonlocalWeights};
use crate::{dot, norm_sq};

use super::{Problem, SolverParams, SolverState};

/// Scalar soft threshold `max(|x| - tau, 0) * sgn(x)` with `sgn(0) = 0`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Closed-form `w` update: soft-thresholds `t - v / beta` at `1 / beta`, where
/// `t` is the current `Du`.
pub fn shrink(t: &DifferenceField, v: &DifferenceField, beta: f64) -> Result<DifferenceField> {
    t.check_shape(v, "shrink")?;
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let tau = 1.0 / beta;
    Ok(t.zip_map(v, |ti, vi| soft_threshold(ti - vi / beta, tau)))
}

/// Objective of the `u` block with `w`, `x` and the multipliers fixed:
/// `-v'(Du - w) + beta/2 ||Du - w||^2 - gamma'(u - x) + theta/2 ||u - x||^2
///  - lambda'(Au - b) + mu/2 ||Au - b||^2`.
pub fn u_objective(
    u: &[f64],
    state: &SolverState,
    problem: &Problem,
    params: &SolverParams,
) -> Result<f64> {
    let du = apply_d(u, problem.width, problem.height)?;
    let tv_res = du.zip_map(&state.w, |a, b| a - b);
    let coupling: Vec<f64> = u.iter().zip(&state.x).map(|(a, b)| a - b).collect();
    let data = data_residual(u, problem)?;
    Ok(
        -state.v.dot(&tv_res) + 0.5 * params.beta * tv_res.norm_sq() - dot(&state.gamma, &coupling)
            + 0.5 * params.theta * norm_sq(&coupling)
            - dot(&state.lambda, &data)
            + 0.5 * params.mu * norm_sq(&data),
    )
}

/// `Au - b`.
pub(crate) fn data_residual(u: &[f64], problem: &Problem) -> Result<Vec<f64>> {
    let mut au = problem.forward(u)?;
    au.iter_mut().zip(problem.b()).for_each(|(a, b)| *a -= b);
    Ok(au)
}

/// Gradient of the `u` block objective:
/// `d = D'(beta Du - v - beta w) - gamma + theta (u - x) + A'(mu (Au - b) - lambda)`.
pub fn u_gradient(
    state: &SolverState,
    problem: &Problem,
    params: &SolverParams,
) -> Result<Vec<f64>> {
    state.check_consistent(problem)?;
    let beta = params.beta;
    let du = apply_d(&state.u, problem.width, problem.height)?;
    let mut tv = du.zip_map(&state.w, |a, w| beta * a - beta * w);
    tv.values_mut()
        .zip(state.v.values())
        .for_each(|(t, v)| *t -= v);
    let tv_term = apply_dt(&tv)?;

    let mut data = data_residual(&state.u, problem)?;
    data.iter_mut()
        .zip(&state.lambda)
        .for_each(|(r, l)| *r = params.mu * *r - l);
    let data_term = problem.adjoint(&data)?;

    Ok((0..state.u.len())
        .map(|i| {
            tv_term[i] - state.gamma[i] + params.theta * (state.u[i] - state.x[i]) + data_term[i]
        })
        .collect())
}

/// Exact line-search step along `-d` for the `u` block:
/// `||d||^2 / (beta ||Dd||^2 + theta ||d||^2 + mu ||Ad||^2)`. The Hessian is
/// never formed.
pub fn optimal_step(d: &[f64], problem: &Problem, beta: f64, theta: f64, mu: f64) -> Result<f64> {
    let dd = norm_sq(d);
    if dd == 0.0 {
        return Err(Error::InvalidParameter(
            "optimal step undefined for a zero direction".into(),
        ));
    }
    let dgd = beta * apply_d(d, problem.width, problem.height)?.norm_sq()
        + theta * dd
        + mu * norm_sq(&problem.forward(d)?);
    Ok((dd / dgd).abs())
}

/// Runs `params.u_steps_per_inner` steepest-descent steps with exact line search
/// on the `u` block. Stops early on a zero gradient.
pub fn u_step(state: &mut SolverState, problem: &Problem, params: &SolverParams) -> Result<()> {
    for _ in 0..params.u_steps_per_inner {
        let d = u_gradient(state, problem, params)?;
        if norm_sq(&d) == 0.0 {
            break;
        }
        let eta = optimal_step(&d, problem, params.beta, params.theta, params.mu)?;
        state.u.iter_mut().zip(&d).for_each(|(u, g)| *u -= eta * g);
    }
    Ok(())
}

/// Closed-form `x` update for the surrogate that replaces `Wx` by `Wr`:
/// `x = (theta r + 2 alpha W r) / (theta + 2 alpha)` with `r = u - gamma / theta`.
/// With `alpha = 0` this is `r` exactly and `weights` is not consulted.
pub fn x_step(
    u: &[f64],
    gamma: &[f64],
    theta: f64,
    alpha: f64,
    weights: Option<&NonlocalWeights>,
) -> Result<Vec<f64>> {
    if u.len() != gamma.len() {
        return Err(Error::DimensionMismatch(format!(
            "x_step: u has length {}, gamma {}",
            u.len(),
            gamma.len()
        )));
    }
    if !(theta > 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "x_step needs theta > 0 and alpha >= 0, got theta={theta} alpha={alpha}"
        )));
    }
    let r: Vec<f64> = u.iter().zip(gamma).map(|(u, g)| u - g / theta).collect();
    if alpha == 0.0 {
        return Ok(r);
    }
    let weights = weights.ok_or_else(|| {
        Error::InvalidParameter("x_step with alpha > 0 needs nonlocal weights".into())
    })?;
    let wr = weights.apply(&r)?;
    let denom = theta + 2.0 * alpha;
    Ok(r.iter()
        .zip(&wr)
        .map(|(r, wr)| (theta * r + 2.0 * alpha * wr) / denom)
        .collect())
}

/// Multiplier ascent with step sizes equal to the penalties:
/// `v -= beta (Du - w)`, `gamma -= theta (u - x)`, `lambda -= mu (Au - b)`.
pub fn update_multipliers(
    state: &mut SolverState,
    problem: &Problem,
    params: &SolverParams,
) -> Result<()> {
    state.check_consistent(problem)?;
    let du = apply_d(&state.u, problem.width, problem.height)?;
    let tv_res = du.zip_map(&state.w, |a, b| a - b);
    state
        .v
        .values_mut()
        .zip(tv_res.values())
        .for_each(|(v, r)| *v -= params.beta * r);
    for ((g, u), x) in state.gamma.iter_mut().zip(&state.u).zip(&state.x) {
        *g -= params.theta * (u - x);
    }
    let data = data_residual(&state.u, problem)?;
    state
        .lambda
        .iter_mut()
        .zip(&data)
        .for_each(|(l, r)| *l -= params.mu * r);
    Ok(())
}

/// Value of the augmented Lagrangian at the current state. Without stored
/// weights the nonlocal term counts as zero.
pub fn augmented_lagrangian_value(
    state: &SolverState,
    problem: &Problem,
    params: &SolverParams,
) -> Result<f64> {
    state.check_consistent(problem)?;
    let nonlocal = match &state.weights {
        Some(w) if params.alpha != 0.0 => params.alpha * w.residual(&state.x)?,
        _ => 0.0,
    };
    Ok(state.w.l1_norm() + u_objective(&state.u, state, problem, params)? + nonlocal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::{compute_weights, NlmParams};
    use crate::sensing::build_operator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rfield(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DifferenceField {
        let mut f = DifferenceField::zeros(w, h);
        f.values_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        f
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.0, 0.1), 0.0);
        assert_eq!(soft_threshold(0.05, 0.1), 0.0);
        assert_eq!(soft_threshold(-0.05, 0.1), 0.0);
        assert!((soft_threshold(0.5, 0.1) - 0.4).abs() < 1e-15);
        assert!((soft_threshold(-0.5, 0.1) + 0.4).abs() < 1e-15);
    }

    fn scalar_field(t: f64) -> DifferenceField {
        let mut f = DifferenceField::zeros(1, 1);
        f.dv[0] = t;
        f.dh[0] = t;
        f
    }

    #[test]
    fn shrink_examples() {
        let zero = DifferenceField::zeros(3, 2);
        assert!(shrink(&zero, &zero, 7.0)
            .unwrap()
            .values()
            .all(|v| v == 0.0));
        let cases = [(0.5, 0.0, 0.46875), (0.5, 1.0, 0.4375), (0.01, 0.0, 0.0)];
        for (t, v, expect) in cases {
            let w = shrink(&scalar_field(t), &scalar_field(v), 32.0).unwrap();
            assert!(
                (w.dv[0] - expect).abs() < 1e-15,
                "t={t} v={v} -> {}",
                w.dv[0]
            );
        }
        assert!(shrink(&zero, &DifferenceField::zeros(2, 3), 1.0).is_err());
        assert!(shrink(&zero, &zero, 0.0).is_err());
    }

    #[test]
    fn x_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = rvec(&mut rng, 16);
        let gamma = rvec(&mut rng, 16);
        let r: Vec<f64> = u.iter().zip(&gamma).map(|(u, g)| u - g / 2.0).collect();
        assert_eq!(x_step(&u, &gamma, 2.0, 0.0, None).unwrap(), r);

        let w = compute_weights(
            &u,
            4,
            4,
            &NlmParams {
                patch: 3,
                window: 3,
                h: 0.5,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let c = vec![0.3; 16];
        let x = x_step(&c, &[0.0; 16], 2.0, 16.0, Some(&w)).unwrap();
        assert!(x.iter().all(|&v| (v - 0.3).abs() < 1e-15));

        assert!(x_step(&u, &gamma, 2.0, 1.0, None).is_err());
        assert!(x_step(&u, &gamma[..3], 2.0, 0.0, None).is_err());
        assert!(x_step(&u, &gamma, 0.0, 0.0, None).is_err());
    }

    #[test]
    fn x_step_solves_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (theta, alpha) = (2.0, 16.0);
        let u: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let gamma = rvec(&mut rng, 64);
        let w = compute_weights(
            &u,
            8,
            8,
            &NlmParams {
                patch: 3,
                window: 5,
                h: 0.3,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let x = x_step(&u, &gamma, theta, alpha, Some(&w)).unwrap();
        let r: Vec<f64> = u.iter().zip(&gamma).map(|(u, g)| u - g / theta).collect();
        let wr = w.apply(&r).unwrap();
        for i in 0..64 {
            let g = (x[i] - r[i]) + 2.0 * alpha / theta * (x[i] - wr[i]);
            assert!(g.abs() <= 1e-12);
        }
    }

    #[test]
    fn multiplier_update_arithmetic() {
        let a = build_operator(3, 4, 1).unwrap();
        let u = vec![0.1, 0.2, 0.3, 0.4];
        let b = a.forward(&u).unwrap();
        let problem = Problem::new(&a, &b, 2, 2).unwrap();
        let params = SolverParams::default();
        let mut state = SolverState::new(&problem).unwrap();
        state.u = u.clone();
        state.x = u.clone();
        state.w = apply_d(&u, 2, 2).unwrap();
        update_multipliers(&mut state, &problem, &params).unwrap();
        assert!(state.v.values().all(|v| v == 0.0));
        assert!(state.gamma.iter().all(|&v| v == 0.0));
        assert!(state.lambda.iter().all(|&v| v.abs() < 1e-12));

        state.w.dh[0] -= 0.1; // (Du - w) = 0.1 at one entry
        update_multipliers(&mut state, &problem, &params).unwrap();
        assert!((state.v.dh[0] + 3.2).abs() < 1e-12);
        update_multipliers(&mut state, &problem, &params).unwrap();
        assert!((state.v.dh[0] + 6.4).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_simple_values() {
        let a = build_operator(2, 4, 3).unwrap();
        let b = vec![0.0; 2];
        let problem = Problem::new(&a, &b, 2, 2).unwrap();
        let params = SolverParams::default();
        let mut state = SolverState::zeros(&problem);
        assert_eq!(
            augmented_lagrangian_value(&state, &problem, &params).unwrap(),
            0.0
        );
        state.w.dv[0] = 1.0;
        assert_eq!(
            augmented_lagrangian_value(&state, &problem, &params).unwrap(),
            17.0
        );
    }

    #[test]
    fn gradient_vanishes_at_feasible_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = build_operator(6, 16, 2).unwrap();
        let u = rvec(&mut rng, 16);
        let b = a.forward(&u).unwrap();
        let problem = Problem::new(&a, &b, 4, 4).unwrap();
        let mut state = SolverState::zeros(&problem);
        state.u = u.clone();
        state.x = u.clone();
        state.w = apply_d(&u, 4, 4).unwrap();
        let d = u_gradient(&state, &problem, &SolverParams::default()).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-10), "{d:?}");
    }

    #[test]
    fn gradient_linear_in_multipliers_and_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = build_operator(6, 16, 2).unwrap();
        let b = rvec(&mut rng, 6);
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let p1 = Problem::new(&a, &b, 4, 4).unwrap();
        let p2 = Problem::new(&a, &b2, 4, 4).unwrap();
        let mut s1 = SolverState::zeros(&p1);
        s1.v = rfield(&mut rng, 4, 4);
        s1.gamma = rvec(&mut rng, 16);
        s1.lambda = rvec(&mut rng, 6);
        let mut s2 = s1.clone();
        s2.v.values_mut().for_each(|v| *v *= 2.0);
        s2.gamma.iter_mut().for_each(|v| *v *= 2.0);
        s2.lambda.iter_mut().for_each(|v| *v *= 2.0);
        let params = SolverParams::default();
        let d1 = u_gradient(&s1, &p1, &params).unwrap();
        let d2 = u_gradient(&s2, &p2, &params).unwrap();
        for (x, y) in d1.iter().zip(&d2) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn degenerate_step_is_inverse_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = build_operator(6, 16, 2).unwrap();
        let b = vec![0.0; 6];
        let problem = Problem::new(&a, &b, 4, 4).unwrap();
        let d = rvec(&mut rng, 16);
        assert_eq!(optimal_step(&d, &problem, 0.0, 2.0, 0.0).unwrap(), 0.5);
        let eta = optimal_step(&d, &problem, 32.0, 2.0, 128.0).unwrap();
        let scaled: Vec<f64> = d.iter().map(|v| -3.7 * v).collect();
        let eta2 = optimal_step(&scaled, &problem, 32.0, 2.0, 128.0).unwrap();
        assert!((eta - eta2).abs() <= 1e-14 * eta);
        assert!(optimal_step(&[0.0; 16], &problem, 32.0, 2.0, 128.0).is_err());
    }

    #[test]
    fn u_step_skips_zero_gradient() {
        let a = build_operator(6, 16, 2).unwrap();
        let b = vec![0.0; 6];
        let problem = Problem::new(&a, &b, 4, 4).unwrap();
        // the all-zero state with b = 0 is stationary
        let mut state = SolverState::zeros(&problem);
        u_step(&mut state, &problem, &SolverParams::default()).unwrap();
        assert!(state.u.iter().all(|&v| v == 0.0));
    }
}
