//! A synthetic three-round child-growth survey.
//!
//! Heights are recorded at three interviews six months apart; the treatment
//! is "sick in the two weeks before the interview" and cumulative exposure
//! counts sick days since four months before the first interview. Children
//! with poorer nutrition fall sick more often, so the history confounds the
//! treatment. The data are invented; they exercise the survey layout of the
//! CSV schema, not any real study.

use crate::panel::{PanelDataset, SubjectRecord};
use crate::propensity::expit;
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

/// Height lost per sick day (cm) in the generated data.
pub const SURVEY_EFFECT: f64 = -0.05;

const ROUNDS: usize = 3;

pub fn survey_panel(n: usize, seed: u64) -> PanelDataset {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let subjects = (0..n)
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64).rng();
            let age: f64 = rng.random_range(36.0..72.0_f64).round();
            let mother: f64 = 150.0 + 5.0 * std.sample(&mut rng);
            let flood = f64::from(u8::from(rng.random::<f64>() < 0.4));
            let toilet_fixed = f64::from(u8::from(rng.random::<f64>() < 0.45));
            let toilet_sealed = if toilet_fixed == 0.0 {
                f64::from(u8::from(rng.random::<f64>() < 0.3))
            } else {
                0.0
            };
            let tube_well = f64::from(u8::from(rng.random::<f64>() < 0.7));
            let frailty: f64 = std.sample(&mut rng);

            let mut y0 = 0.4 * mother + 0.5 * age + 10.0 + 2.0 * frailty + std.sample(&mut rng);
            let mut cum = {
                let rate = 4.0 * (1.0 + 0.5 * flood);
                Poisson::new(rate).expect("rate").sample(&mut rng)
            };
            let mut rec = SubjectRecord {
                id: format!("c{:04}", i + 1),
                y: Vec::with_capacity(ROUNDS),
                a: Vec::with_capacity(ROUNDS),
                cum_a: Vec::with_capacity(ROUNDS),
                l: Vec::with_capacity(ROUNDS),
                v: vec![age, mother, flood],
            };
            for k in 0..ROUNDS {
                let waz = -1.5 + 0.6 * frailty + 0.02 * (y0 - 0.4 * mother - 0.5 * age - 10.0 - 6.0 * k as f64)
                    - 0.03 * cum
                    + 0.3 * std.sample(&mut rng);
                let muac = 14.5 + 0.5 * waz + 0.3 * std.sample(&mut rng);
                let y = y0 + SURVEY_EFFECT * cum;
                let logit = -1.2 - 0.6 * waz - 0.4 * toilet_sealed - 0.3 * tube_well + 0.5 * flood;
                let a = u8::from(rng.random::<f64>() < expit(logit));
                rec.y.push((y * 10.0).round() / 10.0);
                rec.a.push(a);
                rec.cum_a.push(cum);
                rec.l.push(vec![
                    (muac * 10.0).round() / 10.0,
                    (waz * 100.0).round() / 100.0,
                    toilet_fixed,
                    toilet_sealed,
                    tube_well,
                ]);
                // Six months of growth and sickness before the next round;
                // an ongoing episode at the interview makes more sick days likely.
                let rate = 3.0 + 6.0 * f64::from(a) + 2.0 * expit(logit);
                cum += Poisson::new(rate).expect("rate").sample(&mut rng);
                y0 += 3.0 + 0.4 * std.sample(&mut rng);
            }
            rec
        })
        .collect();
    PanelDataset {
        k_max: ROUNDS - 1,
        first_visit: 1,
        l_names: ["muac", "waz", "toilet_fixed", "toilet_sealed", "water_tube_well"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        v_names: ["age_months", "mother_height", "flood"].iter().map(|s| s.to_string()).collect(),
        subjects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelRules;

    #[test]
    fn survey_panel_is_valid_and_deterministic() {
        let p = survey_panel(50, 3);
        p.validate(&PanelRules::relaxed()).unwrap();
        assert_eq!(p, survey_panel(50, 3));
        assert_eq!(p.k_max, 2);
        assert!(p.subjects.iter().any(|s| s.a.contains(&1)));
    }
}
