use super::TimeGrid;
use crate::error::{param, Result};
use crate::rng::RngStream;
use rand::Rng;

/// Flip probabilities above this per step mean the grid is too coarse for
/// the intensity.
pub const COARSE_STEP_PROBABILITY: f64 = 0.5;

/// A binary treatment path on a grid together with its jump counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentPath {
    /// Treatment in force on `[t_i, t_{i+1})`.
    pub a: Vec<u8>,
    /// Number of flips in `(t_0, t_i]`.
    pub jumps: Vec<u32>,
    /// Steps whose flip probability exceeded [`COARSE_STEP_PROBABILITY`].
    pub coarse_steps: usize,
}

/// Simulates a binary jump process whose rate depends on the current
/// treatment and an exogenous covariate path aligned with `grid`.
pub fn simulate_treatment<F>(
    intensity: F,
    grid: &TimeGrid,
    a0: u8,
    covariate: &[f64],
    rng: RngStream,
) -> Result<TreatmentPath>
where
    F: Fn(u8, f64) -> f64,
{
    if covariate.len() != grid.len() {
        return Err(crate::Error::Structural(format!(
            "covariate path has {} points, grid has {}",
            covariate.len(),
            grid.len()
        )));
    }
    simulate_treatment_with(grid, a0, rng, |i, a, _| intensity(a, covariate[i]))
}

/// Simulates a binary jump process whose rate is evaluated step by step.
///
/// `rate(i, a, cum_a)` receives the grid index, the treatment in force at
/// `t_i` and the integrated treatment up to `t_i`; this lets the rate read
/// processes that are themselves driven by the treatment. Over each step the
/// treatment flips with probability `min(1, rate * step)`; at most one flip
/// per step.
pub fn simulate_treatment_with<F>(grid: &TimeGrid, a0: u8, rng: RngStream, mut rate: F) -> Result<TreatmentPath>
where
    F: FnMut(usize, u8, f64) -> f64,
{
    if a0 > 1 {
        return param(format!("initial treatment must be 0 or 1, got {a0}"));
    }
    let dt = grid.step();
    let mut rng = rng.rng();
    let mut path = TreatmentPath {
        a: Vec::with_capacity(grid.len()),
        jumps: Vec::with_capacity(grid.len()),
        coarse_steps: 0,
    };
    let mut a = a0;
    let mut n = 0u32;
    let mut cum = 0.0;
    path.a.push(a);
    path.jumps.push(n);
    for i in 0..grid.n_steps() {
        let s = rate(i, a, cum);
        if !(s >= 0.0) || !s.is_finite() {
            return param(format!("intensity {s} at t = {} is not a finite nonnegative rate", grid.time(i)));
        }
        let prob = s * dt;
        if prob > COARSE_STEP_PROBABILITY {
            path.coarse_steps += 1;
        }
        let u: f64 = rng.random();
        cum += f64::from(a) * dt;
        if u < prob.min(1.0) {
            a = 1 - a;
            n += 1;
        }
        path.a.push(a);
        path.jumps.push(n);
    }
    if path.coarse_steps > 0 {
        log::warn!(
            "{} grid steps had flip probability above {COARSE_STEP_PROBABILITY}; refine the grid",
            path.coarse_steps
        );
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_sim::IntensityParams;

    fn mean_jumps(rate: f64, step: f64, reps: u64) -> f64 {
        let g = TimeGrid::new(0.0, 1.0, step).unwrap();
        let cov = vec![0.0; g.len()];
        (0..reps)
            .map(|r| {
                let p = simulate_treatment(|_, _| rate, &g, 0, &cov, RngStream::new(17, r)).unwrap();
                f64::from(*p.jumps.last().unwrap())
            })
            .sum::<f64>()
            / reps as f64
    }

    #[test]
    fn zero_rate_never_flips() {
        let g = TimeGrid::new(0.0, 5.0, 0.01).unwrap();
        let cov = vec![100.0; g.len()];
        for a0 in [0, 1] {
            let p = simulate_treatment(|_, _| 0.0, &g, a0, &cov, RngStream::new(1, 0)).unwrap();
            assert!(p.a.iter().all(|&a| a == a0));
            assert!(p.jumps.iter().all(|&n| n == 0));
        }
    }

    #[test]
    fn constant_rate_jump_count() {
        // 100 Bernoulli(0.028) steps: mean 2.8 jumps.
        let m = mean_jumps(2.8, 0.01, 10_000);
        assert!((m / 2.8 - 1.0).abs() < 0.05, "mean jumps {m}");
    }

    #[test]
    fn grid_refinement_changes_mean_little() {
        let coarse = mean_jumps(2.8, 0.02, 20_000);
        let fine = mean_jumps(2.8, 0.01, 20_000);
        assert!(((coarse - fine) / fine).abs() < 0.02, "{coarse} vs {fine}");
    }

    #[test]
    fn path_changes_only_at_jumps() {
        let g = TimeGrid::new(0.0, 5.0, 0.01).unwrap();
        let cov: Vec<f64> = (0..g.len()).map(|i| 100.0 + (i as f64 * 0.01).sin()).collect();
        let params = IntensityParams::default();
        let p = simulate_treatment(|a, y| params.rate(a, y), &g, 1, &cov, RngStream::new(2, 5)).unwrap();
        for i in 1..p.a.len() {
            assert!(p.jumps[i] >= p.jumps[i - 1]);
            assert_eq!(p.a[i] != p.a[i - 1], p.jumps[i] > p.jumps[i - 1]);
        }
    }

    #[test]
    fn negative_rate_is_rejected() {
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let cov = vec![0.0; g.len()];
        assert!(simulate_treatment(|_, _| -1.0, &g, 0, &cov, RngStream::new(1, 0)).is_err());
        assert!(simulate_treatment(|_, _| f64::NAN, &g, 0, &cov, RngStream::new(1, 0)).is_err());
        assert!(simulate_treatment(|_, _| 1.0, &g, 0, &cov[1..], RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn coarse_grid_is_flagged() {
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let cov = vec![0.0; g.len()];
        let p = simulate_treatment(|_, _| 6.0, &g, 0, &cov, RngStream::new(1, 0)).unwrap();
        assert_eq!(p.coarse_steps, 10);
    }
}
