use crate::linalg::{dot, norm_inf, solve_square, Matrix};
use crate::Scalar;

use super::simplex::min_norm_point;
use super::{duplicate_groups_from_hessian, BlockKind, JointSolution, SimplexQP, SolveStatus};

/// Unit weights at or below this value make `ζ = η / w` unrecoverable.
pub const ZETA_RECOVERY_THRESHOLD: f64 = 1e-8;

/// Euclidean projection onto `{x : C x ≥ 0, a'x = 1}` by a primal active-set
/// method, warm-started from the previous projection.
struct PolyhedralProjector<'a, T> {
    c: &'a Matrix<T>,
    a: &'a [T],
    x: Vec<T>,
    working: Vec<usize>,
}

impl<'a, T: Scalar> PolyhedralProjector<'a, T> {
    fn new(c: &'a Matrix<T>, a: &'a [T], feasible: Vec<T>) -> Self {
        Self {
            c,
            a,
            x: feasible,
            working: Vec::new(),
        }
    }

    /// Minimizer of `½‖x − y‖²` on the face defined by the working set.
    fn face_projection(&self, y: &[T]) -> Option<(Vec<T>, Vec<T>)> {
        let k = self.working.len() + 1;
        let d = y.len();
        let row = |i: usize| -> &[T] {
            if i < self.working.len() {
                self.c.row(self.working[i])
            } else {
                self.a
            }
        };
        let mut eet = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let v = dot(row(i), row(j));
                eet[(i, j)] = v;
                eet[(j, i)] = v;
            }
        }
        let mut rhs: Vec<T> = (0..k).map(|i| dot(row(i), y)).collect();
        rhs[k - 1] -= T::one();
        let mu = solve_square(&eet, &rhs, T::epsilon() * T::lit(64.0))?;
        let mut x = y.to_vec();
        for i in 0..k {
            let r = row(i);
            for c in 0..d {
                x[c] -= mu[i] * r[c];
            }
        }
        Some((x, mu))
    }

    fn project(&mut self, y: &[T]) -> Vec<T> {
        let d = y.len();
        let nc = self.c.rows();
        let scale = T::one() + norm_inf(y);
        let tiny = T::epsilon() * T::lit(64.0) * scale;
        for _ in 0..(4 * (nc + d) + 20) {
            let Some((target, mu)) = self.face_projection(y) else {
                // dependent working set: drop the newest constraint
                if self.working.pop().is_none() {
                    break;
                }
                continue;
            };
            let dir: Vec<T> = target.iter().zip(&self.x).map(|(t, x)| *t - *x).collect();
            if norm_inf(&dir) <= tiny {
                self.x = target;
                // multipliers of the inequality rows are −μ
                let worst = (0..self.working.len()).map(|i| (i, -mu[i])).fold(
                    (usize::MAX, -tiny),
                    |acc, v| if v.1 < acc.1 { v } else { acc },
                );
                if worst.0 == usize::MAX {
                    break;
                }
                self.working.remove(worst.0);
                continue;
            }
            let mut step = T::one();
            let mut blocking = None;
            for i in 0..nc {
                if self.working.contains(&i) {
                    continue;
                }
                let ci = self.c.row(i);
                let slope = dot(ci, &dir);
                if slope < T::zero() {
                    let val = dot(ci, &self.x).max(T::zero());
                    let t = val / -slope;
                    if t < step {
                        step = t;
                        blocking = Some(i);
                    }
                }
            }
            for (x, dv) in self.x.iter_mut().zip(&dir) {
                *x += step * *dv;
            }
            if let Some(i) = blocking {
                self.working.push(i);
            }
        }
        self.x.clone()
    }
}

fn hessian_times<T: Scalar>(h: &Matrix<T>, x: &[T]) -> Vec<T> {
    h.mul_vec(x)
}

/// Minimizes the lifted QP by projected gradient: a Barzilai–Borwein trial
/// step is projected onto the feasible polyhedron and followed by an exact
/// line search along the projected direction. After each step the solver
/// also tries the exact minimizer on the current active face and keeps it
/// when feasible and not worse. Stops when the projected-gradient residual
/// falls below `tol·(1 + ‖g‖∞)`.
pub fn solve_joint<T: Scalar>(qp: &SimplexQP<T>, tol: f64, max_iter: usize) -> JointSolution<T> {
    let d = qp.dim();
    let h = &qp.hessian;
    let lip = h.frobenius_norm();
    let tol_t = T::effective_tol(tol) * (T::one() + norm_inf(&qp.linear));
    let all_fixed = qp.blocks.iter().all(|b| matches!(b.kind, BlockKind::Fixed));

    let (x, iterations, status, trace) = if all_fixed && qp.least_squares.is_some() {
        // plain simplex least squares: exact finite method
        let (a, z, _) = qp.least_squares.as_ref().unwrap();
        let shifted = Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] - z[i]);
        let mnp = min_norm_point(&shifted.gram(), 50 * d + 100);
        (mnp.lambda, mnp.iterations, mnp.status, Vec::new())
    } else if lip == T::zero() {
        (qp.feasible_start(), 0, SolveStatus::Converged, Vec::new())
    } else {
        projected_gradient(qp, lip, tol_t, max_iter)
    };

    let mut residual_proj = PolyhedralProjector::new(&qp.inequalities, &qp.sum_coeffs, x.clone());
    let kkt_residual = kkt_residual(qp, &x, lip, &mut residual_proj);
    finish(qp, x, iterations, status, kkt_residual, trace)
}

fn kkt_residual<T: Scalar>(
    qp: &SimplexQP<T>,
    x: &[T],
    lip: T,
    proj: &mut PolyhedralProjector<'_, T>,
) -> T {
    if lip == T::zero() {
        return T::zero();
    }
    let grad: Vec<T> = hessian_times(&qp.hessian, x)
        .iter()
        .zip(&qp.linear)
        .map(|(a, b)| *a + *b)
        .collect();
    let y: Vec<T> = x
        .iter()
        .zip(&grad)
        .map(|(xi, gi)| *xi - *gi / lip)
        .collect();
    let p = proj.project(&y);
    let diff: Vec<T> = x.iter().zip(&p).map(|(a, b)| *a - *b).collect();
    norm_inf(&diff) * lip
}

fn projected_gradient<T: Scalar>(
    qp: &SimplexQP<T>,
    lip: T,
    tol: T,
    max_iter: usize,
) -> (Vec<T>, usize, SolveStatus, Vec<T>) {
    let h = &qp.hessian;
    let c = &qp.inequalities;
    let mut x = qp.feasible_start();
    let mut proj = PolyhedralProjector::new(c, &qp.sum_coeffs, x.clone());
    let mut resid_proj = PolyhedralProjector::new(c, &qp.sum_coeffs, x.clone());
    let grad_at = |x: &[T]| -> Vec<T> {
        hessian_times(h, x)
            .iter()
            .zip(&qp.linear)
            .map(|(a, b)| *a + *b)
            .collect()
    };
    let mut grad = grad_at(&x);
    let mut f = qp.quadratic_objective(&x);
    let mut trace = vec![f];
    let mut alpha = T::one() / lip;
    let (alpha_min, alpha_max) = (T::lit(1e-6) / lip, T::lit(1e8) / lip);
    let mono_slack = |f: T| T::epsilon() * T::lit(64.0) * (T::one() + f.abs() + qp.constant.abs());
    let mut stalls = 0;

    for it in 1..=max_iter {
        // projected-gradient step with exact line search
        let y: Vec<T> = x
            .iter()
            .zip(&grad)
            .map(|(xi, gi)| *xi - alpha * *gi)
            .collect();
        let p = proj.project(&y);
        let dir: Vec<T> = p.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let hd = hessian_times(h, &dir);
        let dhd = dot(&dir, &hd);
        let gd = dot(&grad, &dir);
        let x_prev = x.clone();
        let grad_prev = grad.clone();
        if gd < T::zero() {
            let lam = if dhd > T::zero() {
                (-gd / dhd).min(T::one())
            } else {
                T::one()
            };
            for i in 0..x.len() {
                x[i] += lam * dir[i];
                grad[i] += lam * hd[i];
            }
            let f_new = qp.quadratic_objective(&x);
            debug_assert!(
                f_new <= f + mono_slack(f),
                "projected gradient increased the objective"
            );
            f = f_new.min(f);
        }

        // exact minimizer on the active face
        if let Some(xf) = face_minimizer(qp, &x) {
            let dir: Vec<T> = xf.iter().zip(&x).map(|(a, b)| *a - *b).collect();
            let mut tmax = T::one();
            for i in 0..c.rows() {
                let slope = dot(c.row(i), &dir);
                if slope < T::zero() {
                    let val = dot(c.row(i), &x).max(T::zero());
                    tmax = tmax.min(val / -slope);
                }
            }
            let hd = hessian_times(h, &dir);
            let dhd = dot(&dir, &hd);
            let gd = dot(&grad, &dir);
            if tmax > T::zero() && gd < T::zero() {
                let t = if dhd > T::zero() {
                    (-gd / dhd).min(tmax)
                } else {
                    tmax
                };
                let cand: Vec<T> = x.iter().zip(&dir).map(|(a, b)| *a + t * *b).collect();
                let f_cand = qp.quadratic_objective(&cand);
                if f_cand <= f {
                    x = cand;
                    grad = grad_at(&x);
                    f = f_cand;
                }
            }
        }
        trace.push(f);

        let r = kkt_residual(qp, &x, lip, &mut resid_proj);
        if r <= tol {
            return (x, it, SolveStatus::Converged, trace);
        }

        // Barzilai–Borwein step for the next proposal
        let s: Vec<T> = x.iter().zip(&x_prev).map(|(a, b)| *a - *b).collect();
        let yv: Vec<T> = grad.iter().zip(&grad_prev).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &yv);
        let ss = dot(&s, &s);
        if ss == T::zero() {
            stalls += 1;
            alpha = T::one() / lip;
            if stalls > 20 {
                return (x, it, SolveStatus::Stalled, trace);
            }
        } else {
            stalls = 0;
            alpha = if sy > T::zero() { ss / sy } else { alpha_max };
        }
        alpha = alpha.max(alpha_min).min(alpha_max);
    }
    (x, max_iter, SolveStatus::MaxIter, trace)
}

/// Solves `min f` subject to the inequality rows active at `x` holding with
/// equality and `a'x = 1`. Returns `None` when the KKT system is singular.
fn face_minimizer<T: Scalar>(qp: &SimplexQP<T>, x: &[T]) -> Option<Vec<T>> {
    let d = qp.dim();
    let c = &qp.inequalities;
    let scale = T::one() + norm_inf(x);
    let act_tol = T::epsilon() * T::lit(1024.0) * scale;
    let active: Vec<usize> = (0..c.rows())
        .filter(|&i| dot(c.row(i), x) <= act_tol)
        .collect();
    let k = active.len() + 1;
    let n = d + k;
    let hs = qp.hessian.max_abs().max(T::min_positive_value());
    let mut kkt = Matrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            kkt[(i, j)] = qp.hessian[(i, j)];
        }
    }
    for (r, &ai) in active.iter().enumerate() {
        for j in 0..d {
            let v = c[(ai, j)] * hs;
            kkt[(d + r, j)] = v;
            kkt[(j, d + r)] = v;
        }
    }
    for j in 0..d {
        let v = qp.sum_coeffs[j] * hs;
        kkt[(n - 1, j)] = v;
        kkt[(j, n - 1)] = v;
    }
    let mut rhs = vec![T::zero(); n];
    for i in 0..d {
        rhs[i] = -qp.linear[i];
    }
    rhs[n - 1] = hs;
    let sol = solve_square(&kkt, &rhs, T::epsilon() * T::lit(1e3))?;
    let xf = sol[..d].to_vec();
    if xf.iter().all(|v| v.is_finite()) {
        Some(xf)
    } else {
        None
    }
}

fn finish<T: Scalar>(
    qp: &SimplexQP<T>,
    x: Vec<T>,
    iterations: usize,
    status: SolveStatus,
    kkt_residual: T,
    objective_trace: Vec<T>,
) -> JointSolution<T> {
    let thresh = T::lit(ZETA_RECOVERY_THRESHOLD);
    let mut w = Vec::with_capacity(qp.blocks.len());
    let mut zeta = Vec::new();
    let mut degenerate = Vec::new();
    let mut fixed_vars = Vec::new();
    for (bi, b) in qp.blocks.iter().enumerate() {
        let wj = b.unit_weight(&x);
        w.push(wj);
        match &b.kind {
            BlockKind::Fixed => fixed_vars.push(b.offset),
            BlockKind::Midas {
                lag_matrix,
                lag_sums,
            } => {
                let eta = &x[b.offset..b.offset + lag_sums.len()];
                if wj > thresh {
                    zeta.push((bi, eta.iter().map(|e| *e / wj).collect()));
                } else {
                    degenerate.push(bi);
                    let mut z = vec![T::zero(); lag_sums.len()];
                    z[0] = T::one() / T::from_usize_lossy(lag_matrix.rows());
                    zeta.push((bi, z));
                }
            }
        }
    }
    // duplicates: identical Hessian rows and identical linear terms
    let mut groups = duplicate_groups_from_hessian(&qp.hessian, Some(&fixed_vars));
    let gtol = T::effective_tol(1e-12) * (T::one() + norm_inf(&qp.linear));
    groups.retain(|g| {
        g.iter()
            .all(|&i| (qp.linear[i] - qp.linear[g[0]]).abs() <= gtol)
    });
    let var_to_block = |v: usize| qp.blocks.iter().position(|b| b.offset == v).unwrap_or(v);
    let duplicate_groups = groups
        .into_iter()
        .map(|g| g.into_iter().map(var_to_block).collect())
        .collect();
    JointSolution {
        objective: qp.objective(&x),
        w,
        zeta,
        x,
        iterations,
        status,
        kkt_residual,
        degenerate_units: degenerate,
        duplicate_groups,
        objective_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq_align::{build_midas_weights, LagPolyBasis};
    use crate::optim::{build_lifted_problem, solve_simplex_ls, AlignedDesign, DesignColumn};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fixed(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn no_high_frequency_block_matches_simplex_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t0 = 12;
        let cols: Vec<Vec<f64>> = (0..4).map(|_| random_fixed(&mut rng, 2 * t0)).collect();
        let z1 = random_fixed(&mut rng, 2 * t0);
        let design = AlignedDesign {
            z1: z1.clone(),
            columns: cols.iter().cloned().map(DesignColumn::Fixed).collect(),
            t0,
            q: 1,
            covariate_scale: 1.0,
        };
        let qp = build_lifted_problem(&design, &LagPolyBasis::new(3).unwrap(), true).unwrap();
        let sol = solve_joint(&qp, 1e-10, 50_000);
        let direct = solve_simplex_ls(&z1, &Matrix::from_columns(&cols), t0).unwrap();
        assert_abs_diff_eq!(sol.objective, direct.objective, epsilon = 1e-12);
    }

    fn hf_design(
        rng: &mut ChaCha8Rng,
        t0: usize,
        w0: f64,
        b0: &[f64],
    ) -> (AlignedDesign<f64>, Vec<f64>) {
        let m = b0.len();
        let fixed = random_fixed(rng, t0);
        let hf = Matrix::from_fn(t0, m, |_, _| rng.random_range(-1.0..1.0));
        let agg = hf.mul_vec(b0);
        let z1: Vec<f64> = (0..t0)
            .map(|t| w0 * fixed[t] + (1.0 - w0) * agg[t])
            .collect();
        let design = AlignedDesign {
            z1,
            columns: vec![
                DesignColumn::Fixed(fixed),
                DesignColumn::HighFreq {
                    outcomes: hf,
                    covariates: vec![],
                },
            ],
            t0,
            q: 0,
            covariate_scale: 1.0,
        };
        (design, agg)
    }

    #[test]
    fn noiseless_recovery_and_monotone_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b0 = [0.5, 1.0 / 3.0, 1.0 / 6.0];
        let (design, _) = hf_design(&mut rng, 40, 0.4, &b0);
        let basis = LagPolyBasis::new(3).unwrap();
        let qp = build_lifted_problem(&design, &basis, true).unwrap();
        qp.validate().unwrap();
        let sol = solve_joint(&qp, 1e-10, 50_000);
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_abs_diff_eq!(sol.w[0], 0.4, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.w[1], 0.6, epsilon = 1e-6);
        let b = build_midas_weights(&sol.zeta[0].1, 3, &basis).unwrap();
        for (a, e) in b.weights.iter().zip(b0) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-6);
        }
        for pair in sol.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-14);
        }
    }

    #[test]
    fn zero_weight_unit_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut design, _) = hf_design(&mut rng, 30, 1.0, &[0.2, 0.3, 0.5]);
        // make the treated equal the fixed donor exactly
        if let DesignColumn::Fixed(v) = &design.columns[0] {
            design.z1 = v.clone();
        }
        let qp = build_lifted_problem(&design, &LagPolyBasis::new(3).unwrap(), true).unwrap();
        let sol = solve_joint(&qp, 1e-10, 50_000);
        assert_eq!(sol.degenerate_units, vec![1]);
        assert_abs_diff_eq!(sol.zeta[0].1[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.w[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn identical_donors_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let col = random_fixed(&mut rng, 10);
        let z1 = random_fixed(&mut rng, 10);
        let design = AlignedDesign {
            z1: z1.clone(),
            columns: vec![
                DesignColumn::Fixed(col.clone()),
                DesignColumn::Fixed(col.clone()),
                DesignColumn::Fixed(col.clone()),
            ],
            t0: 10,
            q: 0,
            covariate_scale: 1.0,
        };
        let qp = build_lifted_problem(&design, &LagPolyBasis::new(3).unwrap(), true).unwrap();
        let sol = solve_joint(&qp, 1e-10, 1000);
        let single: f64 = col
            .iter()
            .zip(&z1)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 10.0;
        assert_abs_diff_eq!(sol.objective, single, epsilon = 1e-12);
        assert!(sol.non_unique());
        assert_eq!(sol.duplicate_groups, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn projection_is_feasible_and_optimal() {
        let basis = LagPolyBasis::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (design, _) = hf_design(&mut rng, 20, 0.5, &[0.4, 0.4, 0.2]);
        let qp = build_lifted_problem(&design, &basis, true).unwrap();
        let mut proj =
            PolyhedralProjector::new(&qp.inequalities, &qp.sum_coeffs, qp.feasible_start());
        for _ in 0..50 {
            let y = random_fixed(&mut rng, qp.dim())
                .iter()
                .map(|v| 3.0 * v)
                .collect::<Vec<_>>();
            let p = proj.project(&y);
            assert_abs_diff_eq!(dot(&qp.sum_coeffs, &p), 1.0, epsilon = 1e-12);
            for i in 0..qp.inequalities.rows() {
                assert!(dot(qp.inequalities.row(i), &p) >= -1e-12);
            }
            // optimality: no feasible random point is closer
            let dist = |v: &[f64]| {
                v.iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            };
            for _ in 0..200 {
                let mut b: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let w0 = rng.random_range(0.0..1.0);
                let tot: f64 = b.iter().sum();
                b.iter_mut().for_each(|v| *v *= (1.0 - w0) / tot);
                let eta = crate::freq_align::zeta_for_weights(&b, &basis).unwrap();
                let mut cand = vec![w0];
                cand.extend(eta);
                assert!(dist(&p) <= dist(&cand) + 1e-12);
            }
        }
    }
}
