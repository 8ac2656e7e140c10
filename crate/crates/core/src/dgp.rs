//! Data-generating processes M1–M4: an untreated outcome process built from
//! OU pieces, the linear cumulative-treatment effect, and a treatment
//! process co-simulated with the observed outcome.

use crate::error::{param, Error, Result};
use crate::rng::RngStream;
use crate::sde_sim::{
    simulate_ou, simulate_ou_random_env, simulate_treatment_with, stationary_draw, IntensityParams, OuParams,
    RandomEnvParams, TimeGrid,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    M1,
    M2,
    M3,
    M4,
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::M1 => "M1",
            ModelId::M2 => "M2",
            ModelId::M3 => "M3",
            ModelId::M4 => "M4",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(ModelId::M1),
            "M2" => Ok(ModelId::M2),
            "M3" => Ok(ModelId::M3),
            "M4" => Ok(ModelId::M4),
            other => Err(Error::Config(format!("unknown model `{other}` (expected M1..M4)"))),
        }
    }
}

/// `Y_t = Y0_t + psi * int_0^t A_s ds` with `Y0_t = baseline_constant + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalModel {
    pub psi: f64,
    pub baseline_constant: f64,
}

impl Default for CausalModel {
    fn default() -> Self {
        Self {
            psi: 1.0,
            baseline_constant: 100.0,
        }
    }
}

fn default_grid() -> TimeGrid {
    TimeGrid::new(0.0, 5.0, 0.01).expect("default grid")
}

/// Full description of one simulation model. Defaults reproduce the
/// published simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelId,
    pub grid: TimeGrid,
    pub n_subjects: usize,
    pub causal: CausalModel,
    pub ou: OuParams,
    /// Environment chain and regimes (M2 only).
    pub env: Option<RandomEnvParams>,
    /// Noise process of the leading covariate (M4 only).
    pub eta: OuParams,
    pub intensity: IntensityParams,
    pub m4_high_threshold: f64,
    pub m4_low_threshold: f64,
    pub m4_regime_rate: f64,
    /// How far back the M4 regime rule looks at the outcome.
    pub m4_lag: f64,
    /// Weights on `e_{t-1}` and `e_t` in M3.
    pub m3_weights: [f64; 2],
    /// Weights on `Y_t`, `Y0_{t+lead}` and `eta_t` in the M4 covariate.
    pub m4_mix: [f64; 3],
    pub lead_time: f64,
    /// Forces `A_0`; drawn from the intensity's baseline logit when absent.
    pub initial_treatment: Option<u8>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model: ModelId::M1,
            grid: default_grid(),
            n_subjects: 1000,
            causal: CausalModel::default(),
            ou: OuParams::default(),
            env: None,
            eta: OuParams::default(),
            intensity: IntensityParams::default(),
            m4_high_threshold: 101.0,
            m4_low_threshold: 99.0,
            m4_regime_rate: 2.8,
            m4_lag: 0.5,
            m3_weights: [0.8, 0.2],
            m4_mix: [0.2, 0.8, 0.5],
            lead_time: 0.5,
            initial_treatment: None,
        }
    }
}

impl ModelConfig {
    /// Published defaults for `model`.
    pub fn for_model(model: ModelId) -> Self {
        let env = (model == ModelId::M2).then(RandomEnvParams::default);
        Self {
            model,
            env,
            ..Self::default()
        }
    }

    /// Parses a model section; M2 without an `[env]` table gets the default
    /// environment.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = cfg.with_default_env();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub(crate) fn with_default_env(mut self) -> Self {
        if self.model == ModelId::M2 && self.env.is_none() {
            self.env = Some(RandomEnvParams::default());
        }
        self
    }

    pub fn with_subjects(mut self, n: usize) -> Self {
        self.n_subjects = n;
        self
    }

    /// Number of whole visit periods `K`; the grid must start at 0 and end on an integer.
    pub fn k_max(&self) -> Result<usize> {
        let end = self.grid.t_end();
        if self.grid.t_start() != 0.0 || (end - end.round()).abs() > 1e-9 || end < 1.0 {
            return param(format!(
                "simulation grid must run from 0 to an integer horizon, got [{}, {end}]",
                self.grid.t_start()
            ));
        }
        if self.grid.steps_in(1.0).is_none() {
            return param("grid step must divide one time unit");
        }
        Ok(end.round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.k_max()?;
        self.ou.validate()?;
        self.intensity.validate()?;
        if !self.causal.psi.is_finite() || !self.causal.baseline_constant.is_finite() {
            return param("causal parameters must be finite");
        }
        if self.n_subjects == 0 {
            return param("n_subjects must be at least 1");
        }
        if let Some(a) = self.initial_treatment {
            if a > 1 {
                return param("initial_treatment must be 0 or 1");
            }
        }
        match self.model {
            ModelId::M2 => match &self.env {
                Some(env) => env.validate()?,
                None => return param("M2 requires an `env` section"),
            },
            ModelId::M3 => {
                if self.m3_weights.iter().any(|w| !w.is_finite()) {
                    return param("M3 weights must be finite");
                }
            }
            ModelId::M4 => {
                self.eta.validate()?;
                if self.grid.steps_in(self.lead_time).is_none() {
                    return param("lead_time must be a multiple of the grid step");
                }
                if self.grid.steps_in(self.m4_lag).is_none() {
                    return param("m4_lag must be a multiple of the grid step");
                }
                if !(self.m4_regime_rate >= 0.0) || self.m4_mix.iter().any(|w| !w.is_finite()) {
                    return param("M4 regime rate must be nonnegative and mix weights finite");
                }
            }
            ModelId::M1 => {}
        }
        Ok(())
    }
}

/// One subject's processes on the observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPath {
    pub grid: TimeGrid,
    pub y0: Vec<f64>,
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    /// Leading covariate (M4 only).
    pub l_minus: Option<Vec<f64>>,
    pub cum_a: Vec<f64>,
    pub jumps: Vec<u32>,
}

/// `y0 + psi * cum_a`, elementwise.
pub fn apply_effect(y0: &[f64], cum_a: &[f64], psi: f64) -> Result<Vec<f64>> {
    if y0.len() != cum_a.len() {
        return Err(Error::Structural(format!(
            "outcome has {} points, cumulative treatment {}",
            y0.len(),
            cum_a.len()
        )));
    }
    Ok(y0.iter().zip(cum_a).map(|(y, c)| y + psi * c).collect())
}

/// Integral of the right-continuous step function `a` from the grid start:
/// entry `i` covers `[t_0, t_i)`, so a flip at `t_i` is not yet counted there.
pub fn integrate_treatment(a: &[u8], grid: &TimeGrid) -> Vec<f64> {
    let dt = grid.step();
    let mut out = Vec::with_capacity(a.len());
    let mut cum = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        out.push(cum);
        if i + 1 < a.len() {
            cum += f64::from(ai) * dt;
        }
    }
    out
}

const TAG_E: u64 = 1;
const TAG_E0: u64 = 2;
const TAG_ENV0: u64 = 3;
const TAG_A: u64 = 4;
const TAG_A0: u64 = 5;
const TAG_ETA: u64 = 6;
const TAG_ETA0: u64 = 7;

/// Untreated outcome process on the observation grid, possibly extended past
/// the horizon by `after` points.
fn untreated_outcome(config: &ModelConfig, after: usize, rng: RngStream) -> Result<Vec<f64>> {
    let grid = &config.grid;
    let c = config.causal.baseline_constant;
    let ext = grid.extended(0.0, after as f64 * grid.step())?;
    let e = match config.model {
        ModelId::M1 | ModelId::M4 => {
            let e0 = stationary_draw(&config.ou, rng.fork(TAG_E0))?;
            simulate_ou(&config.ou, &ext, e0, rng.fork(TAG_E))?
        }
        ModelId::M2 => {
            let env = config.env.as_ref().ok_or_else(|| Error::Parameter("M2 requires env".into()))?;
            let pi = env.stationary_distribution();
            let u: f64 = rng.fork(TAG_ENV0).rng().random();
            let mut acc = 0.0;
            let mut j0 = pi.len() - 1;
            for (j, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    j0 = j;
                    break;
                }
            }
            let e0 = stationary_draw(&env.regimes[j0], rng.fork(TAG_E0))?;
            simulate_ou_random_env(env, &ext, e0, j0, rng.fork(TAG_E))?
        }
        ModelId::M3 => {
            // The lag needs e on [-1, K]; start that segment from stationarity.
            let pre = grid.steps_in(1.0).expect("validated");
            let full = grid.extended(1.0, after as f64 * grid.step())?;
            let e0 = stationary_draw(&config.ou, rng.fork(TAG_E0))?;
            let e = simulate_ou(&config.ou, &full, e0, rng.fork(TAG_E))?;
            let [w_lag, w_now] = config.m3_weights;
            return Ok((0..ext.len()).map(|i| c + w_lag * e[i] + w_now * e[i + pre]).collect());
        }
    };
    Ok(e.into_iter().map(|x| c + x).collect())
}

/// Simulates one subject. Every random component draws from its own fork of
/// `rng`, so the subject is a pure function of `(config, rng)`.
pub fn generate_subject(config: &ModelConfig, rng: RngStream) -> Result<ContinuousPath> {
    config.validate()?;
    let grid = config.grid;
    let n = grid.len();
    let psi = config.causal.psi;
    let lead = if config.model == ModelId::M4 {
        grid.steps_in(config.lead_time).expect("validated")
    } else {
        0
    };
    let y0_ext = untreated_outcome(config, lead, rng)?;
    let eta = if config.model == ModelId::M4 {
        let e0 = stationary_draw(&config.eta, rng.fork(TAG_ETA0))?;
        Some(simulate_ou(&config.eta, &grid, e0, rng.fork(TAG_ETA))?)
    } else {
        None
    };

    let a0 = match config.initial_treatment {
        Some(a) => a,
        None => {
            let p = config.intensity.initial_probability(y0_ext[0]);
            let u: f64 = rng.fork(TAG_A0).rng().random();
            u8::from(u < p)
        }
    };

    let intensity = config.intensity;
    let mut y_hist: Vec<f64> = Vec::with_capacity(n);
    let treatment = match config.model {
        ModelId::M1 | ModelId::M2 | ModelId::M3 => {
            simulate_treatment_with(&grid, a0, rng.fork(TAG_A), |i, a, cum| {
                intensity.rate(a, y0_ext[i] + psi * cum)
            })?
        }
        ModelId::M4 => {
            let eta = eta.as_ref().expect("M4 eta");
            let lag = grid.steps_in(config.m4_lag).expect("validated");
            let [w_y, w_lead, w_eta] = config.m4_mix;
            let (hi, lo, regime_rate) = (config.m4_high_threshold, config.m4_low_threshold, config.m4_regime_rate);
            simulate_treatment_with(&grid, a0, rng.fork(TAG_A), |i, a, cum| {
                let y = y0_ext[i] + psi * cum;
                y_hist.push(y);
                let lagged = (i >= lag).then(|| y_hist[i - lag]);
                match lagged {
                    Some(yl) if a == 1 && yl > hi && y > hi => regime_rate,
                    Some(yl) if a == 0 && yl < lo && y < lo => regime_rate,
                    _ => {
                        let l = w_y * y + w_lead * y0_ext[i + lead] + w_eta * eta[i];
                        intensity.rate(a, l)
                    }
                }
            })?
        }
    };

    let y0 = y0_ext[..n].to_vec();
    let cum_a = integrate_treatment(&treatment.a, &grid);
    let y = apply_effect(&y0, &cum_a, psi)?;
    let l_minus = eta.map(|eta| {
        let [w_y, w_lead, w_eta] = config.m4_mix;
        (0..n).map(|i| w_y * y[i] + w_lead * y0_ext[i + lead] + w_eta * eta[i]).collect()
    });
    debug_assert!(y.iter().zip(&y0).zip(&cum_a).all(|((y, y0), c)| *y == y0 + psi * c));
    Ok(ContinuousPath {
        grid,
        y0,
        y,
        a: treatment.a,
        l_minus,
        cum_a,
        jumps: treatment.jumps,
    })
}

/// `config.n_subjects` independent subjects; subject `i` uses stream `i`
/// under `master_seed`.
pub fn generate_dataset(config: &ModelConfig, master_seed: u64) -> Result<Vec<ContinuousPath>> {
    config.validate()?;
    (0..config.n_subjects as u64)
        .into_par_iter()
        .map(|i| generate_subject(config, RngStream::new(master_seed, i)))
        .collect()
}
