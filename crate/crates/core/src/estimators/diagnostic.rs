use super::fit_logistic;
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Logistic regression of the treatment at visit `k` on the observed history
/// and untreated outcomes at later visits. A significant coefficient on the
/// outcome at `m` signals that treatment depends on the future beyond what
/// the history (and, with future control, the next visit) explains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTable {
    pub k: usize,
    pub m: usize,
    pub with_future_control: bool,
    pub n: usize,
    pub converged: bool,
    pub separated: bool,
    pub rows: Vec<CoefficientRow>,
}

impl DiagnosticTable {
    pub fn coefficient(&self, name: &str) -> Option<&CoefficientRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Coefficient on the next visit's untreated outcome.
    pub fn next_outcome(&self) -> Option<&CoefficientRow> {
        self.coefficient("y0_next")
    }

    /// Coefficient on the untreated outcome at visit `m`.
    pub fn future_outcome(&self) -> Option<&CoefficientRow> {
        self.coefficient("y0_m")
    }
}

/// Fits the treatment-at-`k` regression with `y0_star[i][j]` the (true or
/// putative) untreated outcome of subject `i` at visit `j`.
pub fn ignorability_diagnostic(
    panel: &PanelDataset,
    y0_star: &[Vec<f64>],
    k: usize,
    m: usize,
    with_future_control: bool,
) -> Result<DiagnosticTable> {
    if y0_star.len() != panel.n_subjects() {
        return Err(Error::Structural(format!(
            "{} untreated-outcome rows for {} subjects",
            y0_star.len(),
            panel.n_subjects()
        )));
    }
    let min_m = if with_future_control { k + 2 } else { k + 1 };
    if m < min_m || m > panel.k_max {
        return Err(Error::Parameter(format!(
            "outcome visit {m} must lie in {min_m}..={}",
            panel.k_max
        )));
    }
    let lagged = k >= 1;
    let mut names = vec!["const".to_string(), "cum_a".to_string()];
    if lagged {
        names.extend(panel.l_names.iter().map(|n| format!("l_lag:{n}")));
    }
    names.extend(panel.l_names.iter().map(|n| format!("l_now:{n}")));
    if lagged {
        names.push("a_lag".into());
    }
    names.push("y_now".into());
    if lagged {
        names.push("y_lag".into());
    }
    if with_future_control {
        names.push("y0_next".into());
    }
    names.push("y0_m".into());

    let mut rows = Vec::with_capacity(panel.n_subjects());
    let mut response = Vec::with_capacity(panel.n_subjects());
    for (s, y0) in panel.subjects.iter().zip(y0_star) {
        if y0.len() != panel.k_max + 1 {
            return Err(Error::Subject {
                subject: s.id.clone(),
                message: "untreated outcomes do not cover every visit".into(),
            });
        }
        let mut x = vec![1.0, s.cum_a[k]];
        if lagged {
            x.extend_from_slice(&s.l[k - 1]);
        }
        x.extend_from_slice(&s.l[k]);
        if lagged {
            x.push(f64::from(s.a[k - 1]));
        }
        x.push(s.y[k]);
        if lagged {
            x.push(s.y[k - 1]);
        }
        if with_future_control {
            x.push(y0[k + 1]);
        }
        x.push(y0[m]);
        rows.push(x);
        response.push(s.a[k]);
    }
    let fit = fit_logistic(&rows, &response, None)?;
    let se = fit.std_errors();
    let normal = Normal::standard();
    let table = names
        .into_iter()
        .zip(fit.coef.iter().zip(&se))
        .map(|(name, (&estimate, &std_error))| {
            let z = estimate / std_error;
            let p_value = if z.is_finite() { 2.0 * normal.sf(z.abs()) } else { f64::NAN };
            CoefficientRow {
                name,
                estimate,
                std_error,
                z,
                p_value,
            }
        })
        .collect();
    Ok(DiagnosticTable {
        k,
        m,
        with_future_control,
        n: panel.n_subjects(),
        converged: fit.converged,
        separated: fit.separated,
        rows: table,
    })
}
