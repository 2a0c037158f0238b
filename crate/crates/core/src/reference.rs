//! Centralized ground truth for small instances.
//!
//! [`dense_decentralized_step`] replays one round of either decentralized method
//! with an explicit Laplacian matrix. [`centralized_barycenter`] minimizes
//! `sum_i W_i(p)` over the simplex, where each
//! `W_i(p) = max_lam <p, lam> - W*_i(lam)` is evaluated by an inner Newton solve.

use nalgebra::{DMatrix, DVector};

use crate::agents::AgentState;
use crate::apdsgd::Step;
use crate::dual::{log_sum_exp_from_costs, EntropicDual};
use crate::error::{Error, Result};
use crate::measures::MeasureOracle;

/// Largest agent count accepted by the dense step.
pub const DENSE_AGENT_LIMIT: usize = 50;
/// Largest `n * total atoms` accepted by the centralized solver.
pub const CENTRALIZED_SIZE_LIMIT: usize = 100_000;

const INNER_MAX_ITER: usize = 200;
const OUTER_MAX_ITER: usize = 200;
const INNER_RESIDUAL_TOL: f64 = 1e-12;
const INNER_RESIDUAL_FALLBACK: f64 = 1e-8;
const SINKHORN_MAX_ITER: usize = 100_000;
const SINKHORN_HANDOFF: f64 = 1e-3;

/// Which update the dense step applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenseUpdate {
    /// Non-accelerated step with `1 / lipschitz` and primal weight `1 / horizon`.
    Nonaccel { lipschitz: f64, horizon: usize },
    Accel(Step),
}

/// One round for all agents with exact gradients, computing `W G` with the
/// dense matrix `laplacian` row by row.
pub fn dense_decentralized_step(
    states: &mut [AgentState],
    laplacian: &DMatrix<f64>,
    dual: &EntropicDual,
    update: DenseUpdate,
) -> Result<()> {
    let m = states.len();
    if m > DENSE_AGENT_LIMIT {
        return Err(Error::SizeGuard(format!(
            "dense step supports at most {DENSE_AGENT_LIMIT} agents, got {m}"
        )));
    }
    if laplacian.nrows() != m || laplacian.ncols() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: laplacian.nrows(),
        });
    }
    let n = dual.n();

    if let DenseUpdate::Accel(step) = update {
        let (a, b) = (step.fresh_weight(), step.carry_weight());
        for s in states.iter_mut() {
            for ((l, z), e) in s.lam_bar.iter_mut().zip(&s.zeta_bar).zip(&s.eta_bar) {
                *l = a * z + b * e;
            }
        }
    }
    let grads = states
        .iter()
        .map(|s| dual.exact_grad(&s.measure, &s.lam_bar))
        .collect::<Result<Vec<_>>>()?;

    let mut wg = vec![vec![0.0; n]; m];
    for (i, row) in wg.iter_mut().enumerate() {
        for (j, g) in grads.iter().enumerate() {
            let w = laplacian[(i, j)];
            if w == 0.0 {
                continue;
            }
            for (r, v) in row.iter_mut().zip(g) {
                *r += w * v;
            }
        }
    }

    for ((s, d), g) in states.iter_mut().zip(&wg).zip(grads) {
        match update {
            DenseUpdate::Nonaccel { lipschitz, horizon } => {
                let inv_l = 1.0 / lipschitz;
                for (l, v) in s.lam_bar.iter_mut().zip(d) {
                    *l -= inv_l * v;
                }
                let p = dual.exact_grad(&s.measure, &s.lam_bar)?;
                let inv_n = 1.0 / horizon.max(1) as f64;
                for (ph, v) in s.p_hat.iter_mut().zip(&p) {
                    *ph += inv_n * v;
                }
            }
            DenseUpdate::Accel(step) => {
                for (z, v) in s.zeta_bar.iter_mut().zip(d) {
                    *z -= step.alpha * v;
                }
                step.blend_into(&s.zeta_bar, &mut s.eta_bar);
                step.blend_into(&g, &mut s.p_hat);
            }
        }
        s.last_grad = g;
        s.round += 1;
    }
    Ok(())
}

/// `W(p) = max_lam <p, lam> - W*(lam)` for a discrete measure, with the maximizer.
///
/// `p` must lie in the open simplex. `start` warm-starts the inner solve, which
/// runs log-domain Sinkhorn sweeps until roughly converged, then damped Newton.
pub fn regularized_cost(
    dual: &EntropicDual,
    measure: &MeasureOracle,
    p: &[f64],
    start: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let n = dual.n();
    if p.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: p.len(),
        });
    }
    if p.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::param("p", "must be strictly positive"));
    }
    let d = measure.as_discrete().ok_or(Error::NotDiscrete)?;
    let gamma = dual.gamma();
    let costs = d
        .atoms()
        .iter()
        .map(|a| dual.cost().cost_vector(dual.grid(), a))
        .collect::<Result<Vec<_>>>()?;
    let log_w: Vec<f64> = d.weights().iter().map(|w| w.ln()).collect();
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();

    let mut lam = start.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let objective = |lam: &[f64]| -> Result<f64> { Ok(dot(p, lam) - dual.exact_dual_value(measure, lam)?) };
    // relative residual max_l |p_l - grad_l| / p_l
    let rel_residual = |grad: &[f64]| p.iter().zip(grad).map(|(a, b)| ((a - b) / a).abs()).fold(0.0, f64::max);

    let mut log_z = vec![0.0; costs.len()];
    for _ in 0..SINKHORN_MAX_ITER {
        for (z, c) in log_z.iter_mut().zip(&costs) {
            *z = log_sum_exp_from_costs(&lam, c, gamma) / gamma;
        }
        for l in 0..n {
            let terms = costs
                .iter()
                .zip(&log_w)
                .zip(&log_z)
                .map(|((c, lw), z)| lw - c[l] / gamma - z);
            let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + terms.map(|t| (t - max).exp()).sum::<f64>().ln();
            lam[l] = gamma * (log_p[l] - lse);
        }
        if rel_residual(&dual.exact_grad(measure, &lam)?) <= SINKHORN_HANDOFF {
            break;
        }
    }

    let ones = DMatrix::from_element(n, n, 1.0);
    for _ in 0..INNER_MAX_ITER {
        let (value, grad, hess) = dual.exact_second_order(measure, &lam)?;
        let current = dot(p, &lam) - value;
        let res = rel_residual(&grad);
        if res <= INNER_RESIDUAL_TOL {
            return Ok((current, lam));
        }
        let residual: Vec<f64> = p.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let h = DMatrix::from_row_slice(n, n, &hess) + &ones;
        let delta = solve_spd(h, DVector::from_vec(residual.clone()))?;
        let slope = dot(&residual, delta.as_slice());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = lam.iter().zip(delta.iter()).map(|(l, d)| l + t * d).collect();
            // near the optimum objective gains fall below roundoff; the residual still decides
            if objective(&trial)? > current + 1e-4 * t * slope
                || rel_residual(&dual.exact_grad(measure, &trial)?) <= 0.5 * res
            {
                lam = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (value, grad, _) = dual.exact_second_order(measure, &lam)?;
    // Newton stalls only at roundoff level
    if rel_residual(&grad) <= INNER_RESIDUAL_FALLBACK {
        return Ok((dot(p, &lam) - value, lam));
    }
    Err(Error::NoConvergence {
        what: "regularized cost inner maximization",
        iterations: INNER_MAX_ITER,
    })
}

/// `sum_i W_i(p)`.
pub fn barycenter_objective(dual: &EntropicDual, measures: &[MeasureOracle], p: &[f64]) -> Result<f64> {
    measures
        .iter()
        .map(|mu| regularized_cost(dual, mu, p, None).map(|r| r.0))
        .sum()
}

/// Minimizer of `sum_i W_i(p)` over the simplex by Newton steps in the tangent space.
///
/// Stops when the projected gradient norm is at most `tol`, or when the Newton
/// decrement bounds the objective gap by `tol^2`.
pub fn centralized_barycenter(dual: &EntropicDual, measures: &[MeasureOracle], tol: f64) -> Result<Vec<f64>> {
    let n = dual.n();
    if measures.is_empty() {
        return Err(Error::param("measures", "at least one measure is required"));
    }
    let mut atoms = 0;
    for mu in measures {
        atoms += mu.as_discrete().ok_or(Error::NotDiscrete)?.len();
    }
    if n.saturating_mul(atoms) > CENTRALIZED_SIZE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "n * atoms = {} exceeds {CENTRALIZED_SIZE_LIMIT}",
            n * atoms
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }

    let mut p = vec![1.0 / n as f64; n];
    let mut duals: Vec<Vec<f64>> = vec![vec![0.0; n]; measures.len()];
    let evaluate = |p: &[f64], starts: &[Vec<f64>]| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut total = 0.0;
        let mut lams = Vec::with_capacity(measures.len());
        for (mu, s) in measures.iter().zip(starts) {
            let (v, lam) = regularized_cost(dual, mu, p, Some(s))?;
            total += v;
            lams.push(lam);
        }
        Ok((total, lams))
    };
    let (mut value, lams) = evaluate(&p, &duals)?;
    duals = lams;

    let inv_n = 1.0 / n as f64;
    let ones = DMatrix::from_element(n, n, 1.0);
    for _ in 0..OUTER_MAX_ITER {
        let mut grad = vec![0.0; n];
        for lam in &duals {
            for (g, l) in grad.iter_mut().zip(lam) {
                *g += l;
            }
        }
        let mean = grad.iter().sum::<f64>() * inv_n;
        grad.iter_mut().for_each(|g| *g -= mean);
        if norm2(&grad) <= tol {
            return Ok(p);
        }

        // Hessian of W_i on the tangent space is the pseudo-inverse of the conjugate Hessian.
        let mut curvature = ones.clone();
        for (mu, lam) in measures.iter().zip(&duals) {
            let (_, _, hess) = dual.exact_second_order(mu, lam)?;
            let h = DMatrix::from_row_slice(n, n, &hess) + &ones * inv_n;
            let inv = h
                .cholesky()
                .ok_or(Error::NoConvergence {
                    what: "conjugate Hessian factorization",
                    iterations: 0,
                })?
                .inverse();
            curvature += inv - &ones * inv_n;
        }
        let rhs = DVector::from_iterator(n, grad.iter().map(|g| -g));
        let d = solve_spd(curvature, rhs)?;
        let d_mean = d.sum() * inv_n;
        let d: Vec<f64> = d.iter().map(|v| v - d_mean).collect();
        let slope = dot(&grad, &d);
        // half the squared Newton decrement estimates the remaining objective gap
        if -0.5 * slope <= tol * tol {
            return Ok(p);
        }

        let mut t: f64 = 1.0;
        for (pi, di) in p.iter().zip(&d) {
            if *di < 0.0 {
                t = t.min(-0.99 * pi / di);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = p.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let s: f64 = trial.iter().sum();
            let trial: Vec<f64> = trial.iter().map(|v| v / s).collect();
            if let Ok((v, lams)) = evaluate(&trial, &duals) {
                if v <= value + 1e-4 * t * slope {
                    p = trial;
                    value = v;
                    duals = lams;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NoConvergence {
        what: "centralized barycenter",
        iterations: OUTER_MAX_ITER,
    })
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    match a.clone().cholesky() {
        Some(c) => Ok(c.solve(&b)),
        None => a.lu().solve(&b).ok_or(Error::NoConvergence {
            what: "linear solve",
            iterations: 0,
        }),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
