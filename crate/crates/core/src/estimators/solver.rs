use super::equations::evaluate;
use super::{fit_logistic, EstimateResult, EstimatorSpec, Theta};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::propensity::build_design;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Converged when `max |U| / n` falls below this.
    pub residual_tol: f64,
    /// ... or when a Newton step is shorter than this.
    pub step_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Matrices with condition number at or above `1 / identification_tol`
    /// count as rank deficient.
    pub identification_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            step_tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
            identification_tol: 1e-10,
        }
    }
}

/// Rank diagnostics for the derivative matrix and the score covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub rank_ok: bool,
    pub cond_b: f64,
    pub cond_cov_u: f64,
}

impl Identification {
    fn failed() -> Self {
        Self {
            rank_ok: false,
            cond_b: f64::INFINITY,
            cond_cov_u: f64::INFINITY,
        }
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || max == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Both matrices must be square, equally sized and have 2-norm condition
/// numbers below `1 / tol`.
pub fn identification_check(b: &DMatrix<f64>, cov_u: &DMatrix<f64>, tol: f64) -> Identification {
    if !b.is_square() || b.shape() != cov_u.shape() || b.nrows() == 0 {
        return Identification::failed();
    }
    let cond_b = condition_number(b);
    let cond_cov_u = condition_number(cov_u);
    Identification {
        rank_ok: cond_b < 1.0 / tol && cond_cov_u < 1.0 / tol,
        cond_b,
        cond_cov_u,
    }
}

/// Pieces of the sandwich covariance at one parameter value.
#[derive(Debug, Clone)]
pub struct SandwichParts {
    pub covariance: DMatrix<f64>,
    /// Jacobian of the summed estimating function.
    pub bread: DMatrix<f64>,
    /// `sum_i U_i U_i'` with `U_i` the subject's summed contributions.
    pub meat: DMatrix<f64>,
}

/// `B^{-1} (sum_i U_i U_i') B^{-T}` with `B = dU/dtheta` at `theta_hat`.
/// The sign of `B` cancels.
pub fn sandwich_cov(panel: &PanelDataset, spec: &EstimatorSpec, theta_hat: &Theta) -> Result<SandwichParts> {
    let ev = evaluate(panel, spec, theta_hat, true, true)?;
    let bread = ev.jacobian.expect("requested");
    let dim = bread.nrows();
    let mut meat = DMatrix::zeros(dim, dim);
    for ui in ev.per_subject.expect("requested") {
        meat += &ui * ui.transpose();
    }
    let inv = bread.clone().try_inverse().ok_or_else(|| Error::Singular {
        condition: condition_number(&bread),
    })?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular {
            condition: condition_number(&bread),
        });
    }
    let cov = &inv * &meat * inv.transpose();
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(SandwichParts {
        covariance,
        bread,
        meat,
    })
}

/// Solves `J x = rhs` after scaling the columns of `J` to unit max-norm.
fn scaled_solve(j: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = j.ncols();
    let scale: Vec<f64> = (0..n)
        .map(|c| {
            let m = j.column(c).amax();
            if m > 0.0 { m } else { 1.0 }
        })
        .collect();
    let js = DMatrix::from_fn(n, n, |r, c| j[(r, c)] / scale[c]);
    let z = js.lu().solve(rhs)?;
    let x = DVector::from_fn(n, |i, _| z[i] / scale[i]);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `psi = 0`, with `beta` from a logistic fit on the psi-free columns; the
/// coefficient of a psi-dependent column starts at zero.
fn default_start(panel: &PanelDataset, spec: &EstimatorSpec) -> Result<(Theta, Option<String>)> {
    let design = build_design(panel, &spec.propensity, 0.0)?;
    let keep: Vec<usize> = (0..design.columns.len())
        .filter(|&c| Some(c) != design.psi_column)
        .collect();
    let weights: Vec<f64> = design
        .rows
        .iter()
        .map(|r| spec.outcome_visits(r.k, panel.k_max).count() as f64)
        .collect();
    let x: Vec<Vec<f64>> = design
        .rows
        .iter()
        .map(|r| keep.iter().map(|&c| r.x[c]).collect())
        .collect();
    let a: Vec<u8> = design.rows.iter().map(|r| r.a).collect();
    let fit = fit_logistic(&x, &a, Some(&weights))?;
    let note = fit.separated.then(|| "initial propensity fit shows separation".to_string());
    let mut beta = vec![0.0; design.columns.len()];
    if fit.coef.iter().all(|b| b.is_finite()) {
        for (&c, b) in keep.iter().zip(&fit.coef) {
            beta[c] = *b;
        }
    }
    Ok((Theta { psi: 0.0, beta }, note))
}

struct NewtonRun {
    start_psi: f64,
    theta: Theta,
    ev: super::equations::Evaluation,
    converged: bool,
    iterations: usize,
    message: Option<String>,
}

/// Damped Newton iterations from `theta`.
fn newton(panel: &PanelDataset, spec: &EstimatorSpec, mut theta: Theta, options: &SolverOptions) -> Result<NewtonRun> {
    let n = panel.n_subjects().max(1) as f64;
    let start_psi = theta.psi;
    let mut converged = false;
    let mut iterations = 0;
    let mut message = None;
    let mut ev = evaluate(panel, spec, &theta, true, false)?;
    while iterations < options.max_iter {
        if ev.u.amax() / n < options.residual_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let jac = ev.jacobian.as_ref().expect("requested");
        let Some(step) = scaled_solve(jac, &(-&ev.u)) else {
            message = Some("singular Jacobian".into());
            break;
        };
        let current = ev.u.norm();
        let base = DVector::from_vec(theta.to_vec());
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..=options.max_halvings {
            let cand = Theta::from_slice((&base + &step * t).as_slice())?;
            let cand_ev = evaluate(panel, spec, &cand, true, false)?;
            if cand_ev.u.iter().all(|x| x.is_finite()) && cand_ev.u.norm() < current {
                next = Some((cand, cand_ev));
                break;
            }
            t *= 0.5;
        }
        match next {
            Some((cand, cand_ev)) => {
                theta = cand;
                ev = cand_ev;
                if step.norm() * t < options.step_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                if step.norm() < options.step_tol {
                    converged = true;
                } else {
                    message = Some("line search stalled".into());
                }
                break;
            }
        }
    }
    if !converged && message.is_none() {
        message = Some(format!("no convergence in {} iterations", options.max_iter));
    }
    Ok(NewtonRun {
        start_psi,
        theta,
        ev,
        converged,
        iterations,
        message,
    })
}

/// Grid points scanned on each side of the start by [`profile_root`]; with
/// a spacing of `psi_scale / 20` the scan covers one scale either way.
const PROFILE_STEPS: usize = 20;

/// `beta` solving the propensity block at fixed `psi`: a logistic fit
/// weighted by the number of outcome visits paired with each row.
fn profile_beta(panel: &PanelDataset, spec: &EstimatorSpec, psi: f64) -> Result<Option<Vec<f64>>> {
    let design = build_design(panel, &spec.propensity, psi)?;
    let weights: Vec<f64> = design
        .rows
        .iter()
        .map(|r| spec.outcome_visits(r.k, panel.k_max).count() as f64)
        .collect();
    let x: Vec<Vec<f64>> = design.rows.iter().map(|r| r.x.clone()).collect();
    let a: Vec<u8> = design.rows.iter().map(|r| r.a).collect();
    let fit = fit_logistic(&x, &a, Some(&weights))?;
    let ok = fit.converged && !fit.separated && fit.coef.iter().all(|b| b.is_finite());
    Ok(ok.then_some(fit.coef))
}

fn profile_score(panel: &PanelDataset, spec: &EstimatorSpec, psi: f64) -> Result<Option<(f64, Vec<f64>)>> {
    let Some(beta) = profile_beta(panel, spec, psi)? else {
        return Ok(None);
    };
    let theta = Theta { psi, beta };
    let u = evaluate(panel, spec, &theta, false, false)?.u[0];
    Ok(u.is_finite().then_some((u, theta.beta)))
}

/// Typical size of `psi`: outcome spread per unit of exposure spread.
fn psi_scale(panel: &PanelDataset) -> f64 {
    let sd = |v: Vec<f64>| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let y = sd(panel.subjects.iter().flat_map(|s| s.y.iter().copied()).collect());
    let c = sd(panel.subjects.iter().flat_map(|s| s.cum_a.iter().copied()).collect());
    let scale = y / c;
    if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Root of the psi-coordinate of `U(psi, beta_hat(psi))` nearest `center`,
/// bracketed by scanning outward and refined by bisection. `None` when the
/// scan finds no sign change.
fn profile_root(panel: &PanelDataset, spec: &EstimatorSpec, center: f64) -> Result<Option<Theta>> {
    let h = psi_scale(panel) / 20.0;
    let mut prev = [profile_score(panel, spec, center)?.map(|(u, _)| (center, u)); 2];
    let mut bracket = None;
    'scan: for j in 1..=PROFILE_STEPS {
        for (side, dir) in [-1.0, 1.0].into_iter().enumerate() {
            let psi = center + dir * h * j as f64;
            let cur = profile_score(panel, spec, psi)?.map(|(u, _)| (psi, u));
            if let (Some((p0, u0)), Some((p1, u1))) = (prev[side], cur) {
                if u0.signum() != u1.signum() {
                    bracket = Some(((p0, u0), (p1, u1)));
                    break 'scan;
                }
            }
            prev[side] = cur;
        }
    }
    let Some(((mut lo, mut u_lo), (mut hi, _))) = bracket else {
        return Ok(None);
    };
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= 1e-13 * mid.abs().max(1.0) {
            break;
        }
        match profile_score(panel, spec, mid)? {
            Some((u, _)) if u.signum() == u_lo.signum() => {
                lo = mid;
                u_lo = u;
            }
            Some(_) => hi = mid,
            None => break,
        }
    }
    let psi = 0.5 * (lo + hi);
    Ok(profile_score(panel, spec, psi)?.map(|(_, beta)| Theta { psi, beta }))
}

/// Newton–Raphson on `U(theta) = 0` with step halving, followed by the
/// sandwich covariance and rank diagnostics at the root.
///
/// Numerical failures (singular Jacobian, stalled line search, degenerate
/// treatment) produce a non-converged result rather than an error; only
/// structural problems with the panel or spec are errors.
pub fn solve(
    panel: &PanelDataset,
    spec: &EstimatorSpec,
    init: Option<Theta>,
    options: &SolverOptions,
) -> Result<EstimateResult> {
    spec.propensity.validate()?;
    let mut parameters = vec!["psi".to_string()];
    parameters.extend(spec.propensity.column_names(panel));
    let n = panel.n_subjects().max(1) as f64;

    let design = build_design(panel, &spec.propensity, 0.0)?;
    let failed = |theta: Theta, iterations: usize, norm: f64, message: String| EstimateResult {
        estimator: spec.kind(),
        parameters: parameters.clone(),
        theta_hat: theta,
        covariance: None,
        std_errors: None,
        converged: false,
        iterations,
        final_residual_norm: norm,
        identification: Identification::failed(),
        message: Some(message),
    };
    let first = design.rows.first().map(|r| r.a);
    if design.rows.iter().all(|r| Some(r.a) == first) {
        let theta = Theta {
            psi: 0.0,
            beta: vec![0.0; parameters.len() - 1],
        };
        return Ok(failed(theta, 0, f64::NAN, "treatment does not vary at the modelled visits".into()));
    }

    let (theta, mut message) = match init {
        Some(t) if t.is_finite() && t.beta.len() + 1 == parameters.len() => (t, None),
        Some(_) => return Err(Error::Parameter("initial theta is not finite or has the wrong dimension".into())),
        None => default_start(panel, spec)?,
    };

    let mut run = newton(panel, spec, theta, options)?;
    if !run.converged && design.psi_column.is_some() {
        if let Some(start) = profile_root(panel, spec, run.start_psi)? {
            let polished = newton(panel, spec, start, options)?;
            log::debug!(
                "{}: newton failed ({:?}); profile start converged = {}",
                spec.kind(),
                run.message,
                polished.converged
            );
            if polished.converged {
                let earlier = run.iterations;
                run = polished;
                run.iterations += earlier;
            }
        }
    }
    let NewtonRun {
        theta,
        ev,
        converged,
        iterations,
        message: newton_message,
        ..
    } = run;
    if newton_message.is_some() {
        message = newton_message;
    }
    if !converged && message.is_none() {
        message = Some(format!("no convergence in {} iterations", options.max_iter));
    }
    let final_residual_norm = ev.u.amax() / n;

    let (covariance, std_errors, identification) = match sandwich_cov(panel, spec, &theta) {
        Ok(parts) => {
            let ident = identification_check(&parts.bread, &parts.meat, options.identification_tol);
            let se: Vec<f64> = (0..parts.covariance.nrows())
                .map(|j| parts.covariance[(j, j)].max(0.0).sqrt())
                .collect();
            let cov: Vec<Vec<f64>> = parts.covariance.row_iter().map(|r| r.iter().copied().collect()).collect();
            (Some(cov), Some(se), ident)
        }
        Err(e) => {
            message.get_or_insert_with(|| e.to_string());
            (None, None, Identification::failed())
        }
    };
    if !identification.rank_ok {
        message.get_or_insert_with(|| "identification check failed".into());
    }
    Ok(EstimateResult {
        estimator: spec.kind(),
        parameters,
        theta_hat: theta,
        covariance,
        std_errors,
        converged,
        iterations,
        final_residual_norm,
        identification,
        message,
    })
}
