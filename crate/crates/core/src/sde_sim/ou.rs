use super::ctmc::sample_path;
use super::{OuParams, RandomEnvParams, TimeGrid};
use crate::error::{param, Result};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::StandardNormal;

const ENV_TAG: u64 = 0x656e_7669_726f_6e;

/// Exact Gaussian transition of the OU process over `dt`.
#[inline]
pub(crate) fn ou_transition(e: f64, params: &OuParams, dt: f64, z: f64) -> f64 {
    e * (-params.theta * dt).exp() + params.transition_sd(dt) * z
}

/// OU path on `grid` starting from `e0` at the first grid point.
pub fn simulate_ou(params: &OuParams, grid: &TimeGrid, e0: f64, rng: RngStream) -> Result<Vec<f64>> {
    params.validate()?;
    if !e0.is_finite() {
        return param("OU starting value must be finite");
    }
    let mut rng = rng.rng();
    let dt = grid.step();
    let decay = (-params.theta * dt).exp();
    let sd = params.transition_sd(dt);
    let mut out = Vec::with_capacity(grid.len());
    let mut e = e0;
    out.push(e);
    for _ in 0..grid.n_steps() {
        let z: f64 = rng.sample(StandardNormal);
        e = e * decay + sd * z;
        out.push(e);
    }
    Ok(out)
}

/// One draw from the stationary law `N(0, (sigma / sqrt(2 theta))^2)`.
pub fn stationary_draw(params: &OuParams, rng: RngStream) -> Result<f64> {
    params.validate()?;
    let z: f64 = rng.rng().sample(StandardNormal);
    Ok(params.stationary_sd() * z)
}

/// OU path whose parameters switch with a continuous-time environment chain
/// started in state `j0`. The diffusion is continuous across switches and each
/// switch time splits the grid step so every piece uses its exact transition.
pub fn simulate_ou_random_env(
    env: &RandomEnvParams,
    grid: &TimeGrid,
    e0: f64,
    j0: usize,
    rng: RngStream,
) -> Result<Vec<f64>> {
    env.validate()?;
    if !e0.is_finite() {
        return param("OU starting value must be finite");
    }
    let path = sample_path(env, grid.t_start(), grid.t_end(), j0, rng.fork(ENV_TAG))?;
    let mut noise = rng.rng();
    let mut out = Vec::with_capacity(grid.len());
    let mut e = e0;
    out.push(e);
    let mut next_jump = 0;
    let mut state = path.states[0];
    for i in 0..grid.n_steps() {
        let mut t = grid.time(i);
        let t_next = grid.time(i + 1);
        while next_jump < path.jump_times.len() && path.jump_times[next_jump] <= t_next {
            let tj = path.jump_times[next_jump];
            if tj > t {
                let z: f64 = noise.sample(StandardNormal);
                e = ou_transition(e, &env.regimes[state], tj - t, z);
                t = tj;
            }
            state = path.states[next_jump + 1];
            next_jump += 1;
        }
        if t_next > t {
            let z: f64 = noise.sample(StandardNormal);
            e = ou_transition(e, &env.regimes[state], t_next - t, z);
        }
        out.push(e);
    }
    Ok(out)
}
