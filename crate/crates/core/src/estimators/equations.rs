use super::{EstimatorSpec, Theta};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::propensity::{build_design, expit};
use nalgebra::{DMatrix, DVector};

/// Estimating function, its Jacobian and per-subject contributions at one `theta`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub u: DVector<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    /// `U_i`, indexed like `panel.subjects`.
    pub per_subject: Option<Vec<DVector<f64>>>,
}

pub(crate) fn evaluate(
    panel: &PanelDataset,
    spec: &EstimatorSpec,
    theta: &Theta,
    with_jacobian: bool,
    with_subjects: bool,
) -> Result<Evaluation> {
    let design = build_design(panel, &spec.propensity, theta.psi)?;
    let p_dim = design.columns.len();
    if theta.beta.len() != p_dim {
        return Err(Error::Structural(format!(
            "theta has {} propensity coefficients, design has {p_dim} columns",
            theta.beta.len()
        )));
    }
    let dim = p_dim + 1;
    let kind = spec.kind();
    let k_max = panel.k_max;

    let mut u = DVector::zeros(dim);
    let mut jac = with_jacobian.then(|| DMatrix::zeros(dim, dim));
    let mut subj = with_subjects.then(|| vec![DVector::zeros(dim); panel.n_subjects()]);
    let mut n_pairs = 0usize;

    let beta_h = design.psi_column.map(|c| theta.beta[c]).unwrap_or(0.0);
    for (row, &dx) in design.rows.iter().zip(&design.dpsi) {
        let s = &panel.subjects[row.subject];
        let mut sum_y0 = 0.0;
        let mut sum_dy0 = 0.0;
        let mut count = 0.0;
        for m in spec.outcome_visits(row.k, k_max) {
            let (y0, dy0) = kind.putative_untreated(s, m, theta.psi);
            sum_y0 += y0;
            sum_dy0 += dy0;
            count += 1.0;
        }
        if count == 0.0 {
            continue;
        }
        n_pairs += count as usize;
        let eta: f64 = row.x.iter().zip(&theta.beta).map(|(x, b)| x * b).sum();
        let p = expit(eta);
        let w = p * (1.0 - p);
        let r = f64::from(row.a) - p;

        let mut contrib = DVector::zeros(dim);
        contrib[0] = r * sum_y0;
        for j in 0..p_dim {
            contrib[1 + j] = count * r * row.x[j];
        }
        u += &contrib;
        if let Some(subj) = subj.as_mut() {
            subj[row.subject] += &contrib;
        }

        if let Some(jac) = jac.as_mut() {
            // dp/dpsi through the psi-dependent design entry.
            let dp_dpsi = w * beta_h * dx;
            jac[(0, 0)] += -dp_dpsi * sum_y0 + r * sum_dy0;
            for j in 0..p_dim {
                jac[(0, 1 + j)] += -w * row.x[j] * sum_y0;
            }
            for a in 0..p_dim {
                let dxa = if Some(a) == design.psi_column { dx } else { 0.0 };
                jac[(1 + a, 0)] += count * (-dp_dpsi * row.x[a] + r * dxa);
                for j in 0..p_dim {
                    jac[(1 + a, 1 + j)] += -count * w * row.x[j] * row.x[a];
                }
            }
        }
    }
    if n_pairs == 0 {
        return Err(Error::Structural("no admissible (treatment, outcome) visit pairs".into()));
    }
    Ok(Evaluation {
        u,
        jacobian: jac,
        per_subject: subj,
    })
}

/// `U(theta)`, summed over subjects and admissible visit pairs.
pub fn estimating_function(panel: &PanelDataset, spec: &EstimatorSpec, theta: &Theta) -> Result<Vec<f64>> {
    Ok(evaluate(panel, spec, theta, false, false)?.u.iter().copied().collect())
}

/// Analytic `dU/dtheta`; rows follow `U`, columns follow `theta`.
pub fn jacobian(panel: &PanelDataset, spec: &EstimatorSpec, theta: &Theta) -> Result<DMatrix<f64>> {
    Ok(evaluate(panel, spec, theta, true, false)?.jacobian.expect("requested"))
}
