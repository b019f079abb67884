use super::*;
use crate::optim::solve_simplex_ls;
use crate::panel::UnitSeries;
use crate::simlab::{gen_panel, DgpConfig};
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn same_only_panel(t0: usize, t1: usize, seed: u64) -> MixedPanel<f64> {
    let h = t0 + t1;
    let donors: Vec<UnitSeries<f64>> = (0..4)
        .map(|j| UnitSeries::same(format!("d{j}"), noise(h, seed + j as u64), None))
        .collect();
    let treated: Vec<f64> = (0..h)
        .map(|t| {
            0.5 * donors[0].baseline().unwrap()[t] + 0.2 * donors[2].baseline().unwrap()[t] + 0.1
        })
        .collect();
    MixedPanel {
        treated: UnitSeries::same("tr", treated, None),
        donors,
        t0,
        t1,
        q: 0,
    }
}

#[test]
fn same_frequency_pool_reduces_to_simplex_ls() {
    let panel = same_only_panel(30, 5, 3);
    let f = fit(&panel, &EstimationConfig::default()).unwrap();
    let t0 = panel.t0;
    let z = Matrix::from_fn(t0, 4, |t, j| panel.donors[j].baseline().unwrap()[t]);
    let direct = solve_simplex_ls(&panel.treated_outcomes()[..t0], &z, t0).unwrap();
    for (a, b) in f.weight_vector().iter().zip(&direct.w) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
    }
    assert_abs_diff_eq!(f.pre_mse, direct.objective, epsilon = 1e-12);
}

#[test]
fn exact_copy_gets_full_weight() {
    let mut panel = same_only_panel(25, 4, 9);
    panel.donors[1] = UnitSeries::same("copy", panel.treated_outcomes().to_vec(), None);
    let f = fit(&panel, &EstimationConfig::default()).unwrap();
    assert_abs_diff_eq!(f.weights["copy"], 1.0, epsilon = 1e-8);
    assert!(f.pre_mse < 1e-14);
}

#[test]
fn counterfactual_is_weighted_sum() {
    let panel = same_only_panel(20, 6, 1);
    let mut f = fit(&panel, &EstimationConfig::default()).unwrap();
    for (i, v) in f.weights.values_mut().enumerate() {
        *v = if i < 2 { 0.5 } else { 0.0 };
    }
    let cf = counterfactual(&f, &panel, 1..=26).unwrap();
    for t in 0..26 {
        let avg =
            0.5 * (panel.donors[0].baseline().unwrap()[t] + panel.donors[1].baseline().unwrap()[t]);
        assert_abs_diff_eq!(cf[t], avg, epsilon = 1e-15);
    }
    assert!(counterfactual(&f, &panel, 0..=3).is_err());
    assert!(counterfactual(&f, &panel, 1..=27).is_err());
}

#[test]
fn post_shift_is_additive() {
    let dgp = DgpConfig {
        j: 6,
        ..DgpConfig::default()
    }
    .build()
    .unwrap();
    let (panel, _) = gen_panel(&dgp, 60, 8, 4).unwrap();
    let f = fit(&panel, &EstimationConfig::default()).unwrap();
    let base = effects(&f, &panel).unwrap();
    let mut shifted = panel.clone();
    if let crate::panel::Outcomes::Baseline(y) = &mut shifted.treated.outcomes {
        for v in &mut y[60..] {
            *v += 1.5;
        }
    }
    let f2 = fit(&shifted, &EstimationConfig::default()).unwrap();
    assert_eq!(f.weights, f2.weights);
    let e2 = effects(&f2, &shifted).unwrap();
    for (a, b) in base.effects.iter().zip(&e2.effects) {
        assert_abs_diff_eq!(*b - *a, 1.5, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(e2.ate - base.ate, 1.5, epsilon = 1e-12);
}

#[test]
fn heterogeneous_effect_mean() {
    let e = EffectSeries::from_effects(10, vec![1.0, 2.0, 3.0]);
    assert_abs_diff_eq!(e.ate, 2.0);
    assert_eq!(e.t1(), 3);
}

#[test]
fn placebo_requires_strictly_earlier_date() {
    let panel = same_only_panel(20, 5, 2);
    let cfg = EstimationConfig::default();
    assert!(matches!(
        placebo_in_time(&panel, 20, &cfg),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        placebo_in_time(&panel, 0, &cfg),
        Err(Error::Domain(_))
    ));
    let (f, e) = placebo_in_time(&panel, 12, &cfg).unwrap();
    assert_eq!(f.t0, 12);
    assert_eq!(e.effects.len(), 8);
}

#[test]
fn placebo_never_reads_post_treatment_data() {
    let panel = same_only_panel(20, 5, 7);
    let mut altered = panel.clone();
    if let crate::panel::Outcomes::Baseline(y) = &mut altered.treated.outcomes {
        for v in &mut y[20..] {
            *v = 1e6;
        }
    }
    let cfg = EstimationConfig::default();
    let (_, a) = placebo_in_time(&panel, 14, &cfg).unwrap();
    let (_, b) = placebo_in_time(&altered, 14, &cfg).unwrap();
    assert_eq!(a.effects, b.effects);
}

#[test]
fn donor_order_does_not_matter() {
    let dgp = DgpConfig {
        j: 6,
        ..DgpConfig::default()
    }
    .build()
    .unwrap();
    let (panel, _) = gen_panel(&dgp, 60, 4, 8).unwrap();
    let f = fit(&panel, &EstimationConfig::default()).unwrap();
    let mut rev = panel.clone();
    rev.donors.reverse();
    let g = fit(&rev, &EstimationConfig::default()).unwrap();
    for (id, w) in &f.weights {
        assert_abs_diff_eq!(*w, g.weights[id], epsilon = 1e-6);
    }
    assert_abs_diff_eq!(f.pre_mse, g.pre_mse, epsilon = 1e-9);
}

#[test]
fn variants_restrict_the_feasible_class() {
    let dgp = DgpConfig {
        j: 6,
        ..DgpConfig::default()
    }
    .build()
    .unwrap();
    let (panel, _) = gen_panel(&dgp, 80, 4, 2).unwrap();
    let full = fit(&panel, &EstimationConfig::default()).unwrap();
    let flat = fit(
        &panel,
        &EstimationConfig {
            variant: Variant::NoMidas,
            ..EstimationConfig::default()
        },
    )
    .unwrap();
    let base = fit(
        &panel,
        &EstimationConfig {
            variant: Variant::BaselineOnly,
            ..EstimationConfig::default()
        },
    )
    .unwrap();
    assert!(full.objective <= flat.objective + 1e-10);
    assert!(flat.objective <= base.objective + 1e-10);
    for id in ["low03", "low04", "high05", "high06"] {
        assert_eq!(base.weights[id], 0.0);
    }
    for mw in flat.midas.values() {
        for w in &mw.weights {
            assert_abs_diff_eq!(*w, 1.0 / 3.0, epsilon = 1e-12);
        }
    }
    assert!(base.recon_models.is_empty());
}

#[test]
fn short_low_frequency_donor_fails_unless_dropped() {
    let dgp = DgpConfig {
        j: 6,
        ..DgpConfig::default()
    }
    .build()
    .unwrap();
    let (panel, _) = gen_panel(&dgp, 20, 4, 2).unwrap();
    match fit(&panel, &EstimationConfig::default()) {
        Err(Error::SampleSize { unit, .. }) => assert!(unit.starts_with("low")),
        other => panic!("unexpected {other:?}"),
    }
    let cfg = EstimationConfig {
        drop_short_lower: true,
        ..EstimationConfig::default()
    };
    let f = fit(&panel, &cfg).unwrap();
    assert!(f.recon_models.is_empty());
    assert_eq!(f.weights["low03"], 0.0);
    assert!(f.diagnostics.iter().any(|d| d.contains("excluded")));
    assert!(effects(&f, &panel).is_ok());
}

#[test]
fn empty_pool_is_a_domain_error() {
    let mut panel = same_only_panel(10, 2, 0);
    panel.donors.clear();
    assert!(matches!(
        fit(&panel, &EstimationConfig::default()),
        Err(Error::Domain(_))
    ));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = EstimationConfig {
        variant: Variant::NoMidas,
        covariate_scale: Some(0.5),
        ..EstimationConfig::default()
    };
    let s = toml::to_string(&cfg).unwrap();
    assert!(s.contains("variant = \"no-midas\""));
    let back: EstimationConfig = toml::from_str(&s).unwrap();
    assert_eq!(back, cfg);
    assert!(toml::from_str::<EstimationConfig>("bogus = 1").is_err());
}
