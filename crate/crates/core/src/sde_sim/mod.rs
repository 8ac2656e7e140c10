//! Continuous-time building blocks: Ornstein–Uhlenbeck diffusions, a
//! finite-state environment chain, OU in random environments and
//! intensity-driven binary jump processes, all recorded on a fixed grid.

mod ctmc;
mod ou;
mod treatment;

pub use ctmc::{simulate_ctmc, CtmcPath};
pub use ou::{simulate_ou, simulate_ou_random_env, stationary_draw};
pub use treatment::{simulate_treatment, simulate_treatment_with, TreatmentPath};

use crate::error::{param, Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

const GRID_TOL: f64 = 1e-9;

/// Equally spaced time points `t_start, t_start + step, ..., t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct TimeGrid {
    t_start: f64,
    step: f64,
    n_steps: usize,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    t_start: f64,
    t_end: f64,
    step: f64,
}

impl TryFrom<GridSpec> for TimeGrid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        TimeGrid::new(s.t_start, s.t_end, s.step)
    }
}

impl From<TimeGrid> for GridSpec {
    fn from(g: TimeGrid) -> Self {
        GridSpec {
            t_start: g.t_start,
            t_end: g.t_end(),
            step: g.step,
        }
    }
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return param(format!("grid step must be positive, got {step}"));
        }
        if !t_start.is_finite() || !t_end.is_finite() || t_end < t_start {
            return param(format!("grid interval [{t_start}, {t_end}] is invalid"));
        }
        let ratio = (t_end - t_start) / step;
        let n_steps = ratio.round();
        if (ratio - n_steps).abs() > GRID_TOL * ratio.max(1.0) {
            return param(format!(
                "grid length {} is not a whole multiple of step {step}",
                t_end - t_start
            ));
        }
        Ok(Self {
            t_start,
            step,
            n_steps: n_steps as usize,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Index of the grid point equal to `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let ratio = (t - self.t_start) / self.step;
        let i = ratio.round();
        if i < 0.0 || i > self.n_steps as f64 || (ratio - i).abs() > 1e-6 {
            return None;
        }
        Some(i as usize)
    }

    /// Number of whole steps spanned by a duration, if it is a multiple of the step.
    pub fn steps_in(&self, duration: f64) -> Option<usize> {
        let ratio = duration / self.step;
        let n = ratio.round();
        if n < 0.0 || (ratio - n).abs() > 1e-6 {
            return None;
        }
        Some(n as usize)
    }

    /// The same step over `[t_start - before, t_end + after]`.
    pub fn extended(&self, before: f64, after: f64) -> Result<Self> {
        TimeGrid::new(self.t_start - before, self.t_end() + after, self.step)
    }
}

/// Mean-reverting diffusion `de = -theta e dt + sigma dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub theta: f64,
    pub sigma: f64,
}

impl OuParams {
    pub fn new(theta: f64, sigma: f64) -> Result<Self> {
        let p = Self { theta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return param(format!("OU theta must be positive, got {}", self.theta));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return param(format!("OU sigma must be nonnegative, got {}", self.sigma));
        }
        Ok(())
    }

    /// Standard deviation of the stationary law, `sigma / sqrt(2 theta)`.
    pub fn stationary_sd(&self) -> f64 {
        self.sigma / (2.0 * self.theta).sqrt()
    }

    /// Conditional standard deviation of `e_{t+dt}` given `e_t`.
    pub fn transition_sd(&self, dt: f64) -> f64 {
        self.stationary_sd() * (-(-2.0 * self.theta * dt).exp_m1()).sqrt()
    }
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            theta: 0.2,
            sigma: 1.0,
        }
    }
}

/// OU dynamics modulated by a finite-state continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEnvParams {
    /// Row-major generator; rows sum to zero.
    pub generator: Vec<Vec<f64>>,
    /// OU parameters used while the environment is in each state.
    pub regimes: Vec<OuParams>,
}

impl RandomEnvParams {
    pub fn validate(&self) -> Result<()> {
        let m = self.generator.len();
        if m == 0 {
            return param("environment generator is empty");
        }
        if self.regimes.len() != m {
            return param(format!(
                "{} regimes supplied for a {m}-state generator",
                self.regimes.len()
            ));
        }
        for (i, row) in self.generator.iter().enumerate() {
            if row.len() != m {
                return param(format!("generator row {i} has {} entries, expected {m}", row.len()));
            }
            let mut off = 0.0;
            for (j, &q) in row.iter().enumerate() {
                if !q.is_finite() {
                    return param(format!("generator entry ({i},{j}) is not finite"));
                }
                if i != j {
                    if q < 0.0 {
                        return param(format!("generator entry ({i},{j}) = {q} is negative"));
                    }
                    off += q;
                }
            }
            if (row[i] + off).abs() > 1e-9 * off.max(1.0) {
                return param(format!("generator row {i} does not sum to zero"));
            }
        }
        for r in &self.regimes {
            r.validate()?;
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.generator.len()
    }

    /// `exp(Q t)`, the state transition probabilities over a lag `t`.
    pub fn transition_matrix(&self, t: f64) -> DMatrix<f64> {
        let m = self.n_states();
        let q = DMatrix::from_fn(m, m, |i, j| self.generator[i][j] * t);
        q.exp()
    }

    /// Stationary law of the environment chain (unique when irreducible).
    pub fn stationary_distribution(&self) -> Vec<f64> {
        let m = self.n_states();
        // Solve pi Q = 0 with sum(pi) = 1 by replacing one balance equation.
        let mut a = DMatrix::from_fn(m, m, |i, j| self.generator[j][i]);
        let mut b = nalgebra::DVector::zeros(m);
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        b[m - 1] = 1.0;
        match a.lu().solve(&b) {
            Some(pi) if pi.iter().all(|p| p.is_finite() && *p >= -1e-12) => {
                pi.iter().map(|p| p.max(0.0)).collect()
            }
            _ => vec![1.0 / m as f64; m],
        }
    }
}

impl Default for RandomEnvParams {
    fn default() -> Self {
        Self {
            generator: vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            regimes: vec![OuParams::new(0.2, 1.0).unwrap(), OuParams::new(1.0, 0.5).unwrap()],
        }
    }
}

/// Log-linear flip intensity `exp(a0 + a1 A + a2 x + a3 A x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl IntensityParams {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha0, self.alpha1, self.alpha2, self.alpha3]
            .iter()
            .all(|a| a.is_finite())
        {
            Ok(())
        } else {
            param("intensity coefficients must be finite")
        }
    }

    pub fn rate(&self, a: u8, x: f64) -> f64 {
        let a = f64::from(a);
        (self.alpha0 + self.alpha1 * a + self.alpha2 * x + self.alpha3 * a * x).exp()
    }

    /// Probability that the treatment is on at time zero given the outcome there.
    pub fn initial_probability(&self, y0: f64) -> f64 {
        crate::propensity::expit(self.alpha0 + self.alpha2 * y0)
    }
}

impl Default for IntensityParams {
    fn default() -> Self {
        Self {
            alpha0: -0.2,
            alpha1: -0.3,
            alpha2: -0.005,
            alpha3: 0.007,
        }
    }
}
