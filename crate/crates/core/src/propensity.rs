//! Logistic propensity models for the treatment at each visit and the
//! per-(subject, visit) design rows they are fitted on.

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, SubjectRecord};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Fitted probabilities are kept inside `[P_MIN, 1 - P_MIN]`.
pub const P_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Discrete-time g-estimation that treats each visit's treatment as held
    /// until the next visit.
    Naive,
    /// G-estimation using the observed exposure integral.
    Modified,
    /// Modified g-estimation whose propensity also conditions on the next
    /// visit's putative untreated outcome.
    ControllingFuture,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [
        EstimatorKind::Naive,
        EstimatorKind::Modified,
        EstimatorKind::ControllingFuture,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Modified => "modified",
            EstimatorKind::ControllingFuture => "controlling_future",
        }
    }

    /// Smallest admissible gap `m - k` between the treatment visit and the
    /// outcome visit in the estimating equations.
    pub fn min_gap(&self) -> usize {
        match self {
            EstimatorKind::ControllingFuture => 2,
            _ => 1,
        }
    }

    /// Untreated outcome at visit `m` implied by effect `psi` and its
    /// derivative in `psi`.
    pub fn putative_untreated(&self, s: &SubjectRecord, m: usize, psi: f64) -> (f64, f64) {
        let exposure = match self {
            EstimatorKind::Naive => s.a[..m].iter().map(|&a| f64::from(a)).sum(),
            _ => s.cum_a[m],
        };
        (s.y[m] - psi * exposure, -exposure)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "naive" => Ok(EstimatorKind::Naive),
            "modified" => Ok(EstimatorKind::Modified),
            "controlling_future" | "ctrl_future" | "cf" => Ok(EstimatorKind::ControllingFuture),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Closed vocabulary of propensity covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Const,
    /// `A*_{k-1}`
    ALag,
    /// `Y*_{k-1}`
    YLag,
    /// `Y*_k`
    YNow,
    /// `cumA*_k`
    CumA,
    /// Every time-varying covariate at `k`.
    LNow,
    /// Every time-varying covariate at `k - 1`.
    LLag,
    /// Every baseline covariate.
    V,
    /// `Y*_{k+1} - psi cumA*_{k+1}`
    Y0Next,
}

impl Term {
    fn needs_lag(&self) -> bool {
        matches!(self, Term::ALag | Term::YLag | Term::LLag)
    }
}

impl FromStr for Term {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "const" => Term::Const,
            "a_lag" => Term::ALag,
            "y_lag" => Term::YLag,
            "y_now" => Term::YNow,
            "cum_a" => Term::CumA,
            "l_now" => Term::LNow,
            "l_lag" => Term::LLag,
            "v" => Term::V,
            "y0_next" => Term::Y0Next,
            other => return Err(Error::Config(format!("unknown propensity term `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensitySpec {
    pub kind: EstimatorKind,
    pub terms: Vec<Term>,
    /// Inclusive visit range; derived from the terms and the estimator when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_range: Option<(usize, usize)>,
}

impl PropensitySpec {
    /// Lagged-history layout: treatment and outcome at the previous visit,
    /// current outcome, time-varying covariates when present.
    pub fn history(kind: EstimatorKind, with_l: bool) -> Self {
        let mut terms = vec![Term::Const, Term::ALag, Term::YLag, Term::YNow];
        if kind != EstimatorKind::Naive {
            terms.push(Term::CumA);
        }
        if with_l {
            terms.extend([Term::LLag, Term::LNow]);
        }
        if kind == EstimatorKind::ControllingFuture {
            terms.push(Term::Y0Next);
        }
        Self {
            kind,
            terms,
            k_range: None,
        }
    }

    /// Current-visit layout for short surveys: baseline covariates, current
    /// covariates and outcome, no lags.
    pub fn current(kind: EstimatorKind) -> Self {
        let mut terms = vec![Term::Const, Term::V, Term::LNow, Term::YNow];
        if kind != EstimatorKind::Naive {
            terms.push(Term::CumA);
        }
        if kind == EstimatorKind::ControllingFuture {
            terms.push(Term::Y0Next);
        }
        Self {
            kind,
            terms,
            k_range: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let has = |t: Term| self.terms.contains(&t);
        let ok = match self.kind {
            EstimatorKind::Naive => !has(Term::CumA) && !has(Term::Y0Next),
            EstimatorKind::Modified => has(Term::CumA) && !has(Term::Y0Next),
            EstimatorKind::ControllingFuture => has(Term::Y0Next),
        };
        if !ok {
            return Err(Error::Config(format!(
                "terms {:?} do not fit the {} estimator",
                self.terms, self.kind
            )));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if self.terms[..i].contains(t) {
                return Err(Error::Config(format!("term {t:?} listed twice")));
            }
        }
        Ok(())
    }

    /// Visits at which the propensity is modelled.
    pub fn visits(&self, panel: &PanelDataset) -> Result<Vec<usize>> {
        let lo = usize::from(self.terms.iter().any(Term::needs_lag));
        let hi = panel.k_max as i64 - self.kind.min_gap() as i64;
        let (from, to) = match self.k_range {
            Some((a, b)) => {
                if a < lo || b as i64 > hi || a > b {
                    return Err(Error::Structural(format!(
                        "visit range {a}..={b} outside the admissible {lo}..={hi}"
                    )));
                }
                (a, b)
            }
            None => {
                if hi < lo as i64 {
                    return Err(Error::Structural(format!(
                        "panel with K = {} has no visit admissible for the {} estimator",
                        panel.k_max, self.kind
                    )));
                }
                (lo, hi as usize)
            }
        };
        Ok((from..=to).collect())
    }

    /// Column labels of the design matrix for `panel`.
    pub fn column_names(&self, panel: &PanelDataset) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.terms {
            match t {
                Term::Const => out.push("const".into()),
                Term::ALag => out.push("a_lag".into()),
                Term::YLag => out.push("y_lag".into()),
                Term::YNow => out.push("y_now".into()),
                Term::CumA => out.push("cum_a".into()),
                Term::LNow => out.extend(panel.l_names.iter().map(|n| format!("l_now:{n}"))),
                Term::LLag => out.extend(panel.l_names.iter().map(|n| format!("l_lag:{n}"))),
                Term::V => out.extend(panel.v_names.iter().map(|n| format!("v:{n}"))),
                Term::Y0Next => out.push("y0_next".into()),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    /// Index into `panel.subjects`.
    pub subject: usize,
    pub k: usize,
    pub x: Vec<f64>,
    pub a: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub columns: Vec<String>,
    pub rows: Vec<DesignRow>,
    /// Column of the psi-dependent entry, if any.
    pub psi_column: Option<usize>,
    /// Per row, the derivative in psi of the entry at `psi_column`.
    pub dpsi: Vec<f64>,
}

/// Design rows of `spec` on `panel`, with psi-dependent entries evaluated at `psi`.
pub fn build_design(panel: &PanelDataset, spec: &PropensitySpec, psi: f64) -> Result<Design> {
    spec.validate()?;
    let visits = spec.visits(panel)?;
    let columns = spec.column_names(panel);
    let psi_column = columns.iter().position(|c| c == "y0_next");
    let mut rows = Vec::with_capacity(panel.n_subjects() * visits.len());
    let mut dpsi = Vec::with_capacity(rows.capacity());
    for (i, s) in panel.subjects.iter().enumerate() {
        for &k in &visits {
            let mut x = Vec::with_capacity(columns.len());
            let mut d = 0.0;
            for t in &spec.terms {
                match t {
                    Term::Const => x.push(1.0),
                    Term::ALag => x.push(f64::from(s.a[k - 1])),
                    Term::YLag => x.push(s.y[k - 1]),
                    Term::YNow => x.push(s.y[k]),
                    Term::CumA => x.push(s.cum_a[k]),
                    Term::LNow => x.extend_from_slice(&s.l[k]),
                    Term::LLag => x.extend_from_slice(&s.l[k - 1]),
                    Term::V => x.extend_from_slice(&s.v),
                    Term::Y0Next => {
                        x.push(s.y[k + 1] - psi * s.cum_a[k + 1]);
                        d = -s.cum_a[k + 1];
                    }
                }
            }
            rows.push(DesignRow { subject: i, k, x, a: s.a[k] });
            dpsi.push(d);
        }
    }
    Ok(Design {
        columns,
        rows,
        psi_column,
        dpsi,
    })
}

/// Inverse logit clamped to `[P_MIN, 1 - P_MIN]`.
#[inline]
pub fn expit(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(P_MIN, 1.0 - P_MIN)
}

fn dot(x: &[f64], beta: &[f64]) -> Result<f64> {
    if x.len() != beta.len() {
        return Err(Error::Structural(format!(
            "design row has {} entries, coefficients {}",
            x.len(),
            beta.len()
        )));
    }
    Ok(x.iter().zip(beta).map(|(a, b)| a * b).sum())
}

/// Propensity `expit(x . beta)`.
pub fn logistic(x: &[f64], beta: &[f64]) -> Result<f64> {
    Ok(expit(dot(x, beta)?))
}

/// Gradient of the propensity in `beta`: `p (1 - p) x`.
pub fn logistic_gradient(x: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let p = logistic(x, beta)?;
    let w = p * (1.0 - p);
    Ok(x.iter().map(|xi| w * xi).collect())
}

/// Derivative of the propensity in psi through the psi-dependent design
/// entry, given that entry's own derivative `dx`.
pub fn logistic_dpsi(x: &[f64], beta: &[f64], psi_column: Option<usize>, dx: f64) -> Result<f64> {
    let p = logistic(x, beta)?;
    Ok(match psi_column {
        Some(c) => p * (1.0 - p) * beta[c] * dx,
        None => 0.0,
    })
}
