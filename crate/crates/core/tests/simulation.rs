use ctsnm_core::dgp::{generate_dataset, integrate_treatment};
use ctsnm_core::panel::{discretize, read_panel_csv, write_panel, PanelDataset, SubjectRecord};
use ctsnm_core::sde_sim::TimeGrid;
use ctsnm_core::study::simulate_panel;
use ctsnm_core::{ContinuousPath, ModelConfig, ModelId, PanelSchema};
use proptest::prelude::*;

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Autocorrelation at integer lag `h` of `0.8 e_{t-1} + 0.2 e_t` for a
/// stationary OU `e` with rate 0.2.
fn m3_rho(h: f64) -> f64 {
    let c = |s: f64| (-0.2 * s.abs()).exp();
    let (a, b) = (0.8, 0.2);
    let cov = |h: f64| (a * a + b * b) * c(h) + a * b * (c(h + 1.0) + c(h - 1.0));
    cov(h) / cov(0.0)
}

#[test]
fn m3_untreated_autocorrelation_matches_closed_form() {
    let cfg = ModelConfig::for_model(ModelId::M3).with_subjects(20_000);
    let (_, y0) = simulate_panel(&cfg, 41).unwrap();
    let col = |k: usize| y0.iter().map(|r| r[k]).collect::<Vec<_>>();
    let (y2, y3, y4) = (col(2), col(3), col(4));
    let r1 = corr(&y2, &y3);
    let r2 = corr(&y2, &y4);
    assert!((r1 - m3_rho(1.0)).abs() < 0.015, "lag 1: {r1} vs {}", m3_rho(1.0));
    assert!((r2 - m3_rho(2.0)).abs() < 0.015, "lag 2: {r2} vs {}", m3_rho(2.0));
    // A Markov (AR(1)) sequence at unit spacing would have rho(2) = rho(1)^2.
    assert!((m3_rho(2.0) - m3_rho(1.0).powi(2)).abs() > 0.04);
    assert!((r2 - r1 * r1).abs() > 0.03, "rho2 {r2} rho1^2 {}", r1 * r1);
}

#[test]
fn m1_untreated_is_markov_at_visits() {
    let cfg = ModelConfig::for_model(ModelId::M1).with_subjects(20_000);
    let (_, y0) = simulate_panel(&cfg, 42).unwrap();
    let col = |k: usize| y0.iter().map(|r| r[k]).collect::<Vec<_>>();
    let r1 = corr(&col(2), &col(3));
    let r2 = corr(&col(2), &col(4));
    assert!((r1 - (-0.2f64).exp()).abs() < 0.015);
    assert!((r2 - (-0.4f64).exp()).abs() < 0.015);
}

#[test]
fn m4_covariate_leads_the_untreated_outcome() {
    let cfg = ModelConfig::for_model(ModelId::M4).with_subjects(3000);
    let paths = generate_dataset(&cfg, 43).unwrap();
    let (mut lead_part, mut ahead, mut now) = (vec![], vec![], vec![]);
    for p in &paths {
        let l = p.l_minus.as_ref().unwrap();
        for k in 0..=4usize {
            let i = p.grid.index_of(k as f64).unwrap();
            let j = p.grid.index_of(k as f64 + 0.5).unwrap();
            lead_part.push(l[i] - 0.2 * p.y[i]);
            ahead.push(p.y0[j]);
            now.push(p.y0[i]);
        }
    }
    // L - 0.2 Y = 0.8 Y0(t + 0.5) + 0.5 eta with var(Y0) = var(eta) = 2.5.
    let sd_l = (0.64f64 * 2.5 + 0.25 * 2.5).sqrt();
    let want_ahead = 0.8 * 2.5 / (sd_l * 2.5f64.sqrt());
    let want_now = want_ahead * (-0.1f64).exp();
    let (c_ahead, c_now) = (corr(&lead_part, &ahead), corr(&lead_part, &now));
    assert!((c_ahead - want_ahead).abs() < 0.02, "{c_ahead} vs {want_ahead}");
    assert!((c_now - want_now).abs() < 0.02, "{c_now} vs {want_now}");
    assert!(c_ahead > c_now);
}

#[test]
fn consistency_holds_for_every_model() {
    for model in [ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4] {
        let cfg = ModelConfig::for_model(model).with_subjects(50);
        let (panel, y0) = simulate_panel(&cfg, 44).unwrap();
        for (s, y0) in panel.subjects.iter().zip(&y0) {
            for k in 0..s.y.len() {
                assert!((s.y[k] - (y0[k] + s.cum_a[k])).abs() < 1e-9);
            }
        }
    }
}

fn step_path(a: Vec<u8>) -> ContinuousPath {
    let grid = TimeGrid::new(0.0, 5.0, 0.01).unwrap();
    let cum_a = integrate_treatment(&a, &grid);
    ContinuousPath {
        grid,
        y0: vec![100.0; a.len()],
        y: cum_a.iter().map(|c| 100.0 + c).collect(),
        a,
        l_minus: None,
        cum_a,
        jumps: vec![],
    }
}

#[test]
fn cumulative_treatment_is_a_left_limit() {
    // Treatment switches on exactly at visit 2.
    let a: Vec<u8> = (0..=500).map(|i| u8::from(i >= 200)).collect();
    let rec = discretize(&step_path(a), &[0, 1, 2, 3, 4, 5], "s".into()).unwrap();
    assert_eq!(rec.a, vec![0, 0, 1, 1, 1, 1]);
    assert_eq!(rec.cum_a[2], 0.0);
    assert!((rec.cum_a[3] - 1.0).abs() < 1e-12);

    // Switched on at 1.5 and off at 3.25: visit sums and exposure disagree.
    let a: Vec<u8> = (0..=500).map(|i| u8::from((150..325).contains(&i))).collect();
    let rec = discretize(&step_path(a), &[0, 1, 2, 3, 4, 5], "s".into()).unwrap();
    assert_eq!(rec.a, vec![0, 0, 1, 1, 0, 0]);
    let visit_sum: f64 = rec.a[..5].iter().map(|&x| f64::from(x)).sum();
    assert!((rec.cum_a[5] - 1.75).abs() < 1e-12);
    assert!((visit_sum - rec.cum_a[5]).abs() > 0.2);
}

#[test]
fn simulation_is_deterministic() {
    let cfg = ModelConfig::for_model(ModelId::M2).with_subjects(200);
    assert_eq!(simulate_panel(&cfg, 45).unwrap(), simulate_panel(&cfg, 45).unwrap());
    assert_ne!(simulate_panel(&cfg, 45).unwrap().0, simulate_panel(&cfg, 46).unwrap().0);
}

fn arb_subject(k_max: usize, n_l: usize, n_v: usize) -> impl Strategy<Value = SubjectRecord> {
    let n = k_max + 1;
    (
        prop::collection::vec(-1e6f64..1e6, n),
        prop::collection::vec(0u8..2, n),
        prop::collection::vec(0.0f64..=1.0, k_max),
        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, n_l), n),
        prop::collection::vec(-1e3f64..1e3, n_v),
    )
        .prop_map(|(y, a, inc, l, v)| {
            let mut cum_a = vec![0.0];
            for d in inc {
                cum_a.push(cum_a.last().unwrap() + d);
            }
            SubjectRecord {
                id: String::new(),
                y,
                a,
                cum_a,
                l,
                v,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn panel_csv_round_trip_is_lossless(
        subjects in prop::collection::vec(arb_subject(3, 2, 1), 1..6),
    ) {
        let subjects: Vec<SubjectRecord> = subjects
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                s.id = format!("subj{i}");
                // Baseline covariates must not vary within a subject; across
                // subjects they must vary for the column to be informative.
                s.v = vec![i as f64 + s.v[0] * 1e-3];
                s
            })
            .collect();
        let panel = PanelDataset {
            k_max: 3,
            first_visit: 0,
            l_names: vec!["p".into(), "q".into()],
            v_names: vec!["w".into()],
            subjects,
        };
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("panel.csv");
        write_panel(&panel, std::fs::File::create(&file).unwrap()).unwrap();
        let back = read_panel_csv(&file, &PanelSchema::default()).unwrap();
        prop_assert_eq!(back.k_max, panel.k_max);
        prop_assert_eq!(&back.l_names, &panel.l_names);
        prop_assert_eq!(&back.v_names, &panel.v_names);
        for (a, b) in back.subjects.iter().zip(&panel.subjects) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(&a.a, &b.a);
            for (x, y) in a.y.iter().chain(&a.cum_a).chain(a.l.iter().flatten()).chain(&a.v)
                .zip(b.y.iter().chain(&b.cum_a).chain(b.l.iter().flatten()).chain(&b.v))
            {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}
