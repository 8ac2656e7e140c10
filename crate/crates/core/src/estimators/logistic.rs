use crate::error::{Error, Result};
use crate::propensity::expit;
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
/// Linear predictors this large mean the likelihood is being driven to a boundary.
const SEPARATION_ETA: f64 = 25.0;

/// Maximum-likelihood logistic regression fitted by Newton–Raphson
/// (iteratively reweighted least squares).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    /// Inverse observed information; absent when it is singular.
    pub covariance: Option<DMatrix<f64>>,
    pub converged: bool,
    /// Complete or quasi-complete separation detected.
    pub separated: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl LogisticFit {
    pub fn std_errors(&self) -> Vec<f64> {
        match (&self.covariance, self.separated) {
            (Some(c), false) => (0..self.coef.len()).map(|j| c[(j, j)].max(0.0).sqrt()).collect(),
            _ => vec![f64::INFINITY; self.coef.len()],
        }
    }
}

fn log_likelihood(x: &DMatrix<f64>, y: &[u8], w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            wi * (f64::from(yi) * e - softplus)
        })
        .sum()
}

/// Fits `P(y = 1 | x) = expit(x . beta)` with optional case weights.
pub fn fit_logistic(rows: &[Vec<f64>], y: &[u8], weights: Option<&[f64]>) -> Result<LogisticFit> {
    let n = rows.len();
    if n == 0 || y.len() != n {
        return Err(Error::Structural(format!("{n} design rows but {} responses", y.len())));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Structural("design rows differ in length".into()));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => return Err(Error::Structural(format!("{} weights for {n} rows", w.len()))),
        None => vec![1.0; n],
    };
    // Work on columns scaled to unit maximum; unscale at the end.
    let mut scale = vec![0.0f64; p];
    for r in rows {
        for (s, v) in scale.iter_mut().zip(r) {
            *s = s.max(v.abs());
        }
    }
    for s in &mut scale {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j] / scale[j]);

    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(&x, y, &w, &beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(p, p);
    for it in 1..=MAX_ITER {
        iterations = it;
        let eta = &x * &beta;
        let mut grad = DVector::zeros(p);
        info.fill(0.0);
        for i in 0..n {
            let pi = expit(eta[i]);
            let r = w[i] * (f64::from(y[i]) - pi);
            let v = w[i] * pi * (1.0 - pi);
            let xi = x.row(i);
            for a in 0..p {
                grad[a] += r * xi[a];
                for b in 0..=a {
                    info[(a, b)] += v * xi[a] * xi[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let Some(step) = info.clone().lu().solve(&grad) else {
            break;
        };
        if step.amax() < 1e-10 {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + &step * t;
            let cand_ll = log_likelihood(&x, y, &w, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_ll)) = accepted else {
            converged = grad.amax() < 1e-6 * n as f64;
            break;
        };
        let gain = cand_ll - ll;
        beta = cand;
        ll = cand_ll;
        if gain.abs() <= 1e-14 * ll.abs().max(1.0) && step.amax() * t < 1e-7 {
            converged = true;
            break;
        }
    }

    let eta = &x * &beta;
    info.fill(0.0);
    for i in 0..n {
        let pi = expit(eta[i]);
        let v = w[i] * pi * (1.0 - pi);
        let xi = x.row(i);
        for a in 0..p {
            for b in 0..p {
                info[(a, b)] += v * xi[a] * xi[b];
            }
        }
    }
    let max_eta = eta.amax();
    let mut all_fit = true;
    for (i, &e) in eta.iter().enumerate() {
        let pi = expit(e);
        if (f64::from(y[i]) - pi).abs() > 1e-6 {
            all_fit = false;
            break;
        }
    }
    let separated = max_eta > SEPARATION_ETA || all_fit;
    let coef: Vec<f64> = beta.iter().zip(&scale).map(|(b, s)| b / s).collect();
    let covariance = info.try_inverse().map(|inv| {
        DMatrix::from_fn(p, p, |a, b| inv[(a, b)] / (scale[a] * scale[b]))
    });
    Ok(LogisticFit {
        coef,
        covariance,
        converged: converged && !separated,
        separated,
        iterations,
        log_likelihood: ll,
    })
}
