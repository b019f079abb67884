use mfscm::freq_align::{basis_eval, build_midas_weights, zeta_for_weights, LagPolyBasis};
use mfscm::linalg::Matrix;
use mfscm::optim::{project_simplex, solve_simplex_ls};
use proptest::prelude::*;

fn in_simplex(w: &[f64]) -> bool {
    w.iter().all(|v| *v >= -1e-12) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-10
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_in_simplex_and_is_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let p = project_simplex(&v).unwrap();
        prop_assert!(in_simplex(&p));
        let pp = project_simplex(&p).unwrap();
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_shift_invariant(v in prop::collection::vec(-5.0f64..5.0, 2..8), c in -3.0f64..3.0) {
        let p = project_simplex(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = project_simplex(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn simplex_ls_scale_equivariance(
        data in prop::collection::vec(-3.0f64..3.0, 40),
        target in prop::collection::vec(-3.0f64..3.0, 10),
        c in 0.1f64..10.0,
    ) {
        let z = Matrix::from_row_major(10, 4, data);
        let a = solve_simplex_ls(&target, &z, 10).unwrap();
        prop_assert!(in_simplex(&a.w));
        let zs = z.scale(c);
        let ts: Vec<f64> = target.iter().map(|x| x * c).collect();
        let b = solve_simplex_ls(&ts, &zs, 10).unwrap();
        let rel = (b.objective - c * c * a.objective).abs() / (1.0 + c * c * a.objective);
        prop_assert!(rel < 1e-8);
    }

    #[test]
    fn simplex_ls_no_worse_than_any_vertex(
        data in prop::collection::vec(-3.0f64..3.0, 30),
        target in prop::collection::vec(-3.0f64..3.0, 10),
    ) {
        let z = Matrix::from_row_major(10, 3, data);
        let sol = solve_simplex_ls(&target, &z, 10).unwrap();
        for j in 0..3 {
            let r: f64 = (0..10).map(|i| (target[i] - z[(i, j)]).powi(2)).sum::<f64>() / 10.0;
            prop_assert!(sol.objective <= r + 1e-12);
        }
    }

    #[test]
    fn weights_and_dictionary_round_trip(w in prop::collection::vec(0.0f64..1.0, 3)) {
        let basis = LagPolyBasis::new(3).unwrap();
        let zeta = zeta_for_weights(&w, &basis).unwrap();
        let back = build_midas_weights(&zeta, 3, &basis).unwrap();
        for (a, b) in back.weights.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_stays_in_unit_band(x in 0.0f64..=1.0, ell in 1usize..8) {
        // shifted Legendre polynomials are bounded by 1 on [0, 1]
        let v = basis_eval(ell, x).unwrap();
        prop_assert!(v.abs() <= 1.0 + 1e-12);
    }
}

#[test]
fn basis_is_orthogonal_under_quadrature() {
    // midpoint rule on 2000 nodes
    let n = 2000;
    for a in 1..=3 {
        for b in 1..=3 {
            let s: f64 = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) / n as f64;
                    basis_eval(a, x).unwrap() * basis_eval(b, x).unwrap()
                })
                .sum::<f64>()
                / n as f64;
            let expect = if a == b {
                1.0 / (2 * a - 1) as f64
            } else {
                0.0
            };
            assert!((s - expect).abs() < 1e-5, "{a},{b}: {s}");
        }
    }
}

#[test]
fn single_precision_core_agrees() {
    let z64 = Matrix::from_row_major(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.5]);
    let t64 = [0.6, 0.4, 1.0, 1.2];
    let z32: Matrix<f32> = Matrix::from_fn(4, 2, |i, j| z64[(i, j)] as f32);
    let t32: Vec<f32> = t64.iter().map(|v| *v as f32).collect();
    let a = solve_simplex_ls(&t64, &z64, 4).unwrap();
    let b = mfscm::optim::solve_simplex_ls(&t32, &z32, 4).unwrap();
    for (x, y) in a.w.iter().zip(&b.w) {
        assert!((x - *y as f64).abs() < 1e-4);
    }
    let _: mfscm::f32::Matrix = z32;
}
