//! Stacked estimating equations for the effect of cumulative treatment.
//!
//! For each subject `i`, modelled visit `k` and later outcome visit `m` the
//! system accumulates
//!
//! ```text
//! (A*_ik - p_ik(theta)) * [Y0*_im(psi), x_ik]
//! ```
//!
//! where `x_ik` is the propensity design row and `Y0*_im(psi)` the outcome
//! with the hypothesised treatment effect removed. The first coordinate
//! identifies `psi`, the rest the propensity coefficients.

mod diagnostic;
mod equations;
mod logistic;
mod solver;

pub use diagnostic::{ignorability_diagnostic, CoefficientRow, DiagnosticTable};
pub use equations::{estimating_function, jacobian, Evaluation};
pub use logistic::{fit_logistic, LogisticFit};
pub use solver::{identification_check, sandwich_cov, solve, Identification, SandwichParts, SolverOptions};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::propensity::{EstimatorKind, PropensitySpec};
use serde::{Deserialize, Serialize};

/// An estimator: its propensity model fixes the kind, the design and the
/// admissible (treatment visit, outcome visit) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub propensity: PropensitySpec,
}

impl EstimatorSpec {
    pub fn new(propensity: PropensitySpec) -> Result<Self> {
        propensity.validate()?;
        Ok(Self { propensity })
    }

    pub fn history(kind: EstimatorKind, with_l: bool) -> Self {
        Self {
            propensity: PropensitySpec::history(kind, with_l),
        }
    }

    pub fn current(kind: EstimatorKind) -> Self {
        Self {
            propensity: PropensitySpec::current(kind),
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        self.propensity.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    /// Outcome visits paired with treatment visit `k`.
    pub fn outcome_visits(&self, k: usize, k_max: usize) -> std::ops::RangeInclusive<usize> {
        (k + self.kind().min_gap())..=k_max
    }

    /// Dimension of `theta` on `panel`.
    pub fn dim(&self, panel: &PanelDataset) -> usize {
        1 + self.propensity.column_names(panel).len()
    }
}

/// Effect `psi` and propensity coefficients `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub psi: f64,
    pub beta: Vec<f64>,
}

impl Theta {
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.psi).chain(self.beta.iter().copied()).collect()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.split_first() {
            Some((&psi, beta)) => Ok(Self {
                psi,
                beta: beta.to_vec(),
            }),
            None => Err(Error::Structural("empty parameter vector".into())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.psi.is_finite() && self.beta.iter().all(|b| b.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: EstimatorKind,
    /// Labels of `theta_hat` in order: `psi`, then the propensity columns.
    pub parameters: Vec<String>,
    pub theta_hat: Theta,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub identification: Identification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl EstimateResult {
    pub fn psi(&self) -> f64 {
        self.theta_hat.psi
    }

    /// Standard error of the effect estimate.
    pub fn psi_se(&self) -> Option<f64> {
        self.std_errors.as_ref().map(|s| s[0]).filter(|s| s.is_finite())
    }

    /// Usable for inference: converged, identified, finite standard error.
    pub fn is_usable(&self) -> bool {
        self.converged && self.identification.rank_ok && self.psi_se().is_some()
    }
}
