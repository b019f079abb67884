use mfscm::estimator::{effects, fit, EstimationConfig};
use mfscm::inference::{block_bootstrap_ci, sigma_v_hat, BlockRule, BootstrapConfig};
use mfscm::simlab::{gen_panel, DgpConfig};
use mfscm::{EffectSeries, MixedPanel, UnitSeries};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn boot(n_boot: usize, seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        n_boot,
        block_rule: BlockRule::FloorPowWithMin { a: 0.5, min_m: 10 },
        seed,
        level: 0.90,
    }
}

#[test]
fn variance_estimate_examples() {
    let e = EffectSeries::from_effects(5, vec![0.0, 2.0]);
    assert!((sigma_v_hat(&e).unwrap() - 1.0).abs() < 1e-15);
    let c = EffectSeries::from_effects(5, vec![3.0; 6]);
    assert_eq!(sigma_v_hat(&c).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = Normal::new(0.0, 2.0).unwrap();
    let big = EffectSeries::from_effects(5, (0..10_000).map(|_| n.sample(&mut rng)).collect());
    assert!((sigma_v_hat(&big).unwrap() - 4.0).abs() < 0.1);
    assert!(sigma_v_hat(&EffectSeries::from_effects(5, vec![1.0])).is_err());
}

#[test]
fn constant_donors_collapse_the_interval() {
    let (t0, t1) = (30, 6);
    let h = t0 + t1;
    let donors = vec![
        UnitSeries::same("a", vec![1.0; h], None),
        UnitSeries::same("b", vec![3.0; h], None),
    ];
    let panel = MixedPanel {
        treated: UnitSeries::same("tr", vec![2.0; h], None),
        donors,
        t0,
        t1,
        q: 0,
    };
    let f = fit(&panel, &EstimationConfig::default()).unwrap();
    let e = effects(&f, &panel).unwrap();
    let ci = block_bootstrap_ci(&panel, &f, &e, &boot(200, 1)).unwrap();
    assert!(ci.sigma_v_hat.abs() < 1e-20);
    assert!(ci.boot_stats.iter().all(|s| s.abs() < 1e-10));
    assert!((ci.ci_upper - ci.ci_lower).abs() < 1e-10);
    assert!((ci.ci_lower - e.ate).abs() < 1e-10);
}

#[test]
fn doubling_replicates_is_stable() {
    let dgp = DgpConfig::default().build().unwrap();
    let (panel, _) = gen_panel(&dgp, 60, 20, 5).unwrap();
    let f = fit(&panel, &EstimationConfig::default()).unwrap();
    let e = effects(&f, &panel).unwrap();
    let a = block_bootstrap_ci(&panel, &f, &e, &boot(1000, 9)).unwrap();
    let b = block_bootstrap_ci(&panel, &f, &e, &boot(2000, 9)).unwrap();
    // the first N replicates coincide
    assert_eq!(a.boot_stats[..], b.boot_stats[..1000]);
    let mut s = a.boot_stats.clone();
    s.sort_by(f64::total_cmp);
    let iqr = (s[750] - s[250]) / (20f64).sqrt();
    let tol = 3.0 * iqr / (1000f64).sqrt();
    assert!(
        (a.ci_lower - b.ci_lower).abs() <= tol,
        "{} vs {}",
        a.ci_lower,
        b.ci_lower
    );
    assert!((a.ci_upper - b.ci_upper).abs() <= tol);
}

#[test]
fn block_rule_bounds_are_enforced() {
    let dgp = DgpConfig::default().build().unwrap();
    let (panel, _) = gen_panel(&dgp, 40, 5, 5).unwrap();
    let f = fit(&panel, &EstimationConfig::default()).unwrap();
    let e = effects(&f, &panel).unwrap();
    let cfg = BootstrapConfig {
        block_rule: BlockRule::Fixed { m: 40 },
        ..boot(10, 0)
    };
    assert!(matches!(
        block_bootstrap_ci(&panel, &f, &e, &cfg),
        Err(mfscm::Error::Config { .. })
    ));
    let bad_level = BootstrapConfig {
        level: 1.5,
        ..boot(10, 0)
    };
    match block_bootstrap_ci(&panel, &f, &e, &bad_level) {
        Err(err) => assert!(err.to_string().contains("level must lie in (0,1)")),
        Ok(_) => panic!("level 1.5 accepted"),
    }
}

#[test]
fn baseline_only_fit_bootstraps_on_same_frequency_donors() {
    let dgp = DgpConfig::default().build().unwrap();
    let (panel, _) = gen_panel(&dgp, 50, 10, 2).unwrap();
    let cfg = EstimationConfig {
        variant: mfscm::Variant::BaselineOnly,
        ..EstimationConfig::default()
    };
    let f = fit(&panel, &cfg).unwrap();
    let e = effects(&f, &panel).unwrap();
    let ci = block_bootstrap_ci(&panel, &f, &e, &boot(100, 3)).unwrap();
    assert!(ci.ci_lower <= ci.ci_upper);
    assert_eq!(ci.boot_stats.len(), 100);
}
