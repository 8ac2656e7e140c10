//! Causal effects of a continuous-time binary treatment from visits at
//! integer times.
//!
//! The crate simulates outcome and treatment processes in continuous time
//! ([`sde_sim`], [`dgp`]), observes them at visits ([`panel`]), and estimates
//! the effect rate `psi` of cumulative treatment in
//! `Y_t = Y0_t + psi * int_0^t A_s ds` with three g-estimators ([`estimators`]).
//! [`study`] runs replicated simulation studies over all of them.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod panel;
pub mod propensity;
pub mod rng;
pub mod sde_sim;
pub mod study;
pub mod synthetic;

pub use dgp::{ContinuousPath, ModelConfig, ModelId};
pub use error::{Error, Result};
pub use estimators::{EstimateResult, EstimatorSpec, Theta};
pub use panel::{PanelDataset, PanelSchema};
pub use propensity::{EstimatorKind, PropensitySpec, Term};
pub use rng::RngStream;
pub use study::{StudyConfig, StudySummary};
