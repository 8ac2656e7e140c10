use super::{RandomEnvParams, TimeGrid};
use crate::error::{param, Result};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// A continuous-time chain path: `states[0]` holds from the start,
/// `states[i + 1]` holds from `jump_times[i]` on (right-continuous).
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcPath {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
}

impl CtmcPath {
    pub fn state_at(&self, t: f64) -> usize {
        let n = self.jump_times.partition_point(|&s| s <= t);
        self.states[n]
    }
}

pub(crate) fn sample_path(
    env: &RandomEnvParams,
    t_start: f64,
    t_end: f64,
    j0: usize,
    rng: RngStream,
) -> Result<CtmcPath> {
    env.validate()?;
    if j0 >= env.n_states() {
        return param(format!("initial state {j0} outside 0..{}", env.n_states()));
    }
    let mut rng = rng.rng();
    let mut path = CtmcPath {
        jump_times: Vec::new(),
        states: vec![j0],
    };
    let mut t = t_start;
    let mut state = j0;
    loop {
        let rate = -env.generator[state][state];
        if rate <= 0.0 {
            break;
        }
        let hold = Exp::new(rate).expect("positive rate").sample(&mut rng);
        t += hold;
        if t > t_end {
            break;
        }
        let u: f64 = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = state;
        for (j, &q) in env.generator[state].iter().enumerate() {
            if j == state {
                continue;
            }
            acc += q;
            next = j;
            if u < acc {
                break;
            }
        }
        state = next;
        path.jump_times.push(t);
        path.states.push(state);
    }
    Ok(path)
}

/// Exact chain path projected onto the grid: entry `i` is the state in force
/// at `grid.time(i)`.
pub fn simulate_ctmc(env: &RandomEnvParams, grid: &TimeGrid, j0: usize, rng: RngStream) -> Result<Vec<usize>> {
    let path = sample_path(env, grid.t_start(), grid.t_end(), j0, rng)?;
    Ok(grid.points().into_iter().map(|t| path.state_at(t)).collect())
}
