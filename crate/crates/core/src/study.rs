//! Replicated simulation studies: simulate, observe at visits, fit every
//! estimator, and summarise bias, spread and interval coverage.

use crate::dgp::{generate_subject, ModelConfig, ModelId};
use crate::error::{Error, Result};
use crate::estimators::{ignorability_diagnostic, solve, DiagnosticTable, EstimatorSpec, SolverOptions};
use crate::panel::{discretize, observe_untreated, PanelDataset};
use crate::propensity::{EstimatorKind, PropensitySpec, Term};
use crate::rng::{replication_seed, RngStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::path::{Path, PathBuf};

/// Environment variable giving the default number of worker threads.
pub const WORKERS_ENV: &str = "CTSNM_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub model: ModelConfig,
    pub estimators: Vec<EstimatorSpec>,
    pub replications: usize,
    pub master_seed: u64,
    pub ci_level: f64,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl StudyConfig {
    /// All three estimators with the lagged-history propensity layout.
    pub fn new(model: ModelConfig, replications: usize, master_seed: u64) -> Self {
        let with_l = model.model == ModelId::M4;
        Self {
            estimators: EstimatorKind::ALL
                .iter()
                .map(|&k| EstimatorSpec::history(k, with_l))
                .collect(),
            model,
            replications,
            master_seed,
            ci_level: 0.95,
            output: None,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level {} must lie in (0, 1)", self.ci_level)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators configured".into()));
        }
        for e in &self.estimators {
            e.propensity.validate()?;
        }
        Ok(())
    }

    /// Normal quantile for two-sided intervals at `ci_level`.
    pub fn z_critical(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 + self.ci_level / 2.0)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: StudyFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = StudyFile {
            model: self.model.clone(),
            study: StudySection {
                replications: self.replications,
                master_seed: self.master_seed,
                ci_level: self.ci_level,
                output: self.output.clone(),
                workers: self.workers,
            },
            estimators: self
                .estimators
                .iter()
                .map(|e| EstimatorEntry {
                    kind: e.kind(),
                    terms: Some(e.propensity.terms.clone()),
                    k_range: e.propensity.k_range,
                })
                .collect(),
        };
        toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))
    }
}

/// On-disk layout of a study configuration.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    #[serde(default)]
    model: ModelConfig,
    study: StudySection,
    #[serde(default)]
    estimators: Vec<EstimatorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudySection {
    replications: usize,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_ci")]
    ci_level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
}

fn default_ci() -> f64 {
    0.95
}

/// One `[[estimators]]` entry; `terms` defaults to the lagged-history layout.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorEntry {
    kind: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terms: Option<Vec<Term>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k_range: Option<(usize, usize)>,
}

impl StudyFile {
    fn resolve(self) -> Result<StudyConfig> {
        let mut cfg = StudyConfig::new(self.model.with_default_env(), self.study.replications, self.study.master_seed);
        cfg.ci_level = self.study.ci_level;
        cfg.output = self.study.output;
        cfg.workers = self.study.workers;
        if !self.estimators.is_empty() {
            let with_l = cfg.model.model == ModelId::M4;
            cfg.estimators = self
                .estimators
                .into_iter()
                .map(|e| {
                    let mut spec = PropensitySpec::history(e.kind, with_l);
                    if let Some(t) = e.terms {
                        spec.terms = t;
                    }
                    spec.k_range = e.k_range;
                    EstimatorSpec::new(spec)
                })
                .collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Simulated panel plus the untreated outcomes at each visit.
pub fn simulate_panel(model: &ModelConfig, seed: u64) -> Result<(PanelDataset, Vec<Vec<f64>>)> {
    model.validate()?;
    let k_max = model.k_max()?;
    let visits: Vec<usize> = (0..=k_max).collect();
    let pairs = (0..model.n_subjects as u64)
        .into_par_iter()
        .map(|i| {
            let path = generate_subject(model, RngStream::new(seed, i))?;
            Ok((discretize(&path, &visits, i.to_string())?, observe_untreated(&path, &visits)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let with_l = model.model == ModelId::M4;
    let (subjects, y0): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let panel = PanelDataset {
        k_max,
        first_visit: 0,
        l_names: if with_l { vec!["lead".into()] } else { Vec::new() },
        v_names: Vec::new(),
        subjects,
    };
    Ok((panel, y0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub estimator: EstimatorKind,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covered: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ReplicationOutcome {
    pub fn ok(&self) -> bool {
        self.converged && self.psi_hat.is_some() && self.se.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub outcomes: Vec<ReplicationOutcome>,
}

/// Simulates replication `rep` and fits every configured estimator.
pub fn run_replication(config: &StudyConfig, rep: usize) -> Result<ReplicationRecord> {
    let seed = replication_seed(config.master_seed, rep as u64);
    let (panel, _) = simulate_panel(&config.model, seed)?;
    let psi_true = config.model.causal.psi;
    let z = config.z_critical();
    let options = SolverOptions::default();
    let outcomes = config
        .estimators
        .iter()
        .map(|spec| match solve(&panel, spec, None, &options) {
            Ok(res) => {
                let usable = res.is_usable();
                let se = res.psi_se();
                let psi = res.psi();
                ReplicationOutcome {
                    estimator: spec.kind(),
                    converged: usable,
                    psi_hat: psi.is_finite().then_some(psi),
                    se,
                    covered: se.filter(|_| usable).map(|se| (psi - psi_true).abs() <= z * se),
                    message: res.message,
                }
            }
            Err(e) => ReplicationOutcome {
                estimator: spec.kind(),
                converged: false,
                psi_hat: None,
                se: None,
                covered: None,
                message: Some(e.to_string()),
            },
        })
        .collect();
    Ok(ReplicationRecord { rep, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub n_ok: usize,
    pub n_failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd_estimates: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    /// Average reported standard error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub model: ModelId,
    pub psi_true: f64,
    pub n_subjects: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub ci_level: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl StudySummary {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub summary: StudySummary,
    pub replications: Vec<ReplicationRecord>,
}

impl StudyReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// One row per replication and estimator.
    pub fn estimates_csv(&self) -> String {
        let mut out = String::from("rep,estimator,converged,psi_hat,se,covered\n");
        for r in &self.replications {
            for o in &r.outcomes {
                let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.rep,
                    o.estimator,
                    o.converged,
                    opt(o.psi_hat),
                    opt(o.se),
                    o.covered.map(|c| c.to_string()).unwrap_or_default()
                ));
            }
        }
        out
    }
}

/// Aggregates replications in replication-index order, so the result does
/// not depend on the order in which `records` arrive.
pub fn summarize(config: &StudyConfig, records: &[ReplicationRecord]) -> StudySummary {
    let mut sorted: Vec<&ReplicationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.rep);
    let psi_true = config.model.causal.psi;
    let estimators = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let ok: Vec<&ReplicationOutcome> = sorted
                .iter()
                .filter_map(|r| r.outcomes.get(j))
                .filter(|o| o.ok())
                .collect();
            let n_ok = ok.len();
            let n_failed = sorted.len() - n_ok;
            let est: Vec<f64> = ok.iter().map(|o| o.psi_hat.unwrap()).collect();
            let mean = (n_ok > 0).then(|| est.iter().sum::<f64>() / n_ok as f64);
            let sd = mean.filter(|_| n_ok > 1).map(|m| {
                (est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_ok - 1) as f64).sqrt()
            });
            let covered = ok.iter().filter(|o| o.covered == Some(true)).count();
            EstimatorSummary {
                estimator: spec.kind(),
                n_ok,
                n_failed,
                mean_estimate: mean,
                sd_estimates: sd,
                se_mean: sd.map(|s| s / (n_ok as f64).sqrt()),
                abs_bias: mean.map(|m| (m - psi_true).abs()),
                coverage: (n_ok > 0).then(|| covered as f64 / n_ok as f64),
                mean_se: (n_ok > 0).then(|| ok.iter().map(|o| o.se.unwrap()).sum::<f64>() / n_ok as f64),
            }
        })
        .collect();
    StudySummary {
        model: config.model.model,
        psi_true,
        n_subjects: config.model.n_subjects,
        replications: sorted.len(),
        master_seed: config.master_seed,
        ci_level: config.ci_level,
        estimators,
    }
}

fn worker_count(config: &StudyConfig) -> Option<usize> {
    config
        .workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|&w| w > 0)
}

/// Runs every replication (in parallel), aggregates, and writes the report
/// to `config.output` when set.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let work = || {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| run_replication(config, rep))
            .collect::<Result<Vec<_>>>()
    };
    let records = match worker_count(config) {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let report = StudyReport {
        summary: summarize(config, &records),
        replications: records,
    };
    if let Some(path) = &config.output {
        std::fs::write(path, report.to_toml()?)?;
    }
    Ok(report)
}

/// The two treatment regressions at visit `k` against the untreated outcome
/// at `m`: without and with control for the next visit's untreated outcome.
pub fn run_diagnostic(
    model: &ModelConfig,
    seed: u64,
    k: usize,
    m: usize,
) -> Result<(DiagnosticTable, DiagnosticTable)> {
    let (panel, y0) = simulate_panel(model, seed)?;
    Ok((
        ignorability_diagnostic(&panel, &y0, k, m, false)?,
        ignorability_diagnostic(&panel, &y0, k, m, true)?,
    ))
}
