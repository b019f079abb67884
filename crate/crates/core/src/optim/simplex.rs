use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, lstsq, solve_square, spd_condition, Matrix};
use crate::Scalar;

use super::{duplicate_groups_from_hessian, JointSolution, SolveStatus};

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::domain(
            "cannot project an empty vector onto the simplex",
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(
            "non-finite entry in simplex projection input",
        ));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (i, ui) in u.iter().enumerate() {
        cumsum += *ui;
        let t = (cumsum - T::one()) / T::from_usize_lossy(i + 1);
        if *ui - t > T::zero() {
            theta = t;
        }
    }
    Ok(v.iter().map(|x| (*x - theta).max(T::zero())).collect())
}

/// Result of the minimum-norm-point search over a convex hull.
pub(crate) struct MinNormPoint<T> {
    pub lambda: Vec<T>,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Wolfe's minimum-norm-point algorithm on the Gram matrix `K` of points
/// `p_1..p_n`: minimizes `λ'Kλ` over the probability simplex. Finite and
/// exact up to round-off; the support set stays affinely independent.
pub(crate) fn min_norm_point<T: Scalar>(k: &Matrix<T>, max_iter: usize) -> MinNormPoint<T> {
    let n = k.rows();
    let scale = (0..n).fold(T::zero(), |acc, i| acc.max(k[(i, i)].abs()));
    let start = (0..n)
        .min_by(|&a, &b| {
            k[(a, a)]
                .partial_cmp(&k[(b, b)])
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    let mut lambda = vec![T::zero(); n];
    lambda[start] = T::one();
    if scale == T::zero() {
        return MinNormPoint {
            lambda,
            iterations: 0,
            status: SolveStatus::Converged,
        };
    }
    let eps_opt = T::effective_tol(1e-13) * scale;
    let pivot_tol = T::epsilon() * T::lit(16.0);
    let mut support = vec![start];
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    'major: while iterations < max_iter {
        iterations += 1;
        let g: Vec<T> = (0..n)
            .map(|i| support.iter().map(|&s| k[(i, s)] * lambda[s]).sum())
            .collect();
        let xx: T = support.iter().map(|&s| lambda[s] * g[s]).sum();
        let (j, gj) =
            g.iter().enumerate().fold(
                (0, T::infinity()),
                |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc },
            );
        if gj >= xx - eps_opt {
            status = SolveStatus::Converged;
            break;
        }
        if support.contains(&j) {
            status = SolveStatus::Stalled;
            break;
        }
        support.push(j);

        loop {
            let s = support.len();
            // bordered system [K_SS  c·1; c·1'  0] [μ; ν/c] = [0; c]
            let mut kkt = Matrix::zeros(s + 1, s + 1);
            for (a, &ia) in support.iter().enumerate() {
                for (b, &ib) in support.iter().enumerate() {
                    kkt[(a, b)] = k[(ia, ib)];
                }
                kkt[(a, s)] = scale;
                kkt[(s, a)] = scale;
            }
            let mut rhs = vec![T::zero(); s + 1];
            rhs[s] = scale;
            let Some(sol) = solve_square(&kkt, &rhs, pivot_tol) else {
                support.pop();
                status = SolveStatus::Stalled;
                break 'major;
            };
            let mu = &sol[..s];
            if mu.iter().all(|v| *v > T::zero()) {
                for (a, &ia) in support.iter().enumerate() {
                    lambda[ia] = mu[a];
                }
                break;
            }
            // move from λ towards μ until a weight hits zero
            let mut theta = T::one();
            let mut hit = 0;
            for (a, &ia) in support.iter().enumerate() {
                if mu[a] <= T::zero() {
                    let denom = lambda[ia] - mu[a];
                    let t = if denom > T::zero() {
                        lambda[ia] / denom
                    } else {
                        T::zero()
                    };
                    if t < theta {
                        theta = t;
                        hit = a;
                    }
                }
            }
            for (a, &ia) in support.iter().enumerate() {
                lambda[ia] = lambda[ia] + theta * (mu[a] - lambda[ia]);
            }
            lambda[support[hit]] = T::zero();
            support.retain(|&i| lambda[i] > T::zero());
            if support.is_empty() {
                // cannot happen in exact arithmetic; restart from the best vertex
                lambda.iter_mut().for_each(|v| *v = T::zero());
                lambda[start] = T::one();
                support.push(start);
                status = SolveStatus::Stalled;
                break 'major;
            }
        }
    }
    let total: T = lambda.iter().copied().sum();
    lambda.iter_mut().for_each(|v| *v /= total);
    MinNormPoint {
        lambda,
        iterations,
        status,
    }
}

fn check_design<T: Scalar>(z1: &[T], z_cols: &Matrix<T>) -> Result<()> {
    if z_cols.cols() == 0 {
        return Err(Error::domain("design has no donor columns"));
    }
    if z_cols.rows() != z1.len() {
        return Err(Error::domain(format!(
            "target has length {}, design columns have length {}",
            z1.len(),
            z_cols.rows()
        )));
    }
    Ok(())
}

fn residual_sq<T: Scalar>(z1: &[T], z_cols: &Matrix<T>, w: &[T]) -> T {
    z_cols
        .mul_vec(w)
        .iter()
        .zip(z1)
        .map(|(a, b)| (*b - *a) * (*b - *a))
        .sum()
}

/// Minimizes `(1/t0)·‖z1 − Z w‖²` over the probability simplex.
pub fn solve_simplex_ls<T: Scalar>(
    z1: &[T],
    z_cols: &Matrix<T>,
    t0: usize,
) -> Result<JointSolution<T>> {
    check_design(z1, z_cols)?;
    let (rows, n) = (z_cols.rows(), z_cols.cols());
    let shifted = Matrix::from_fn(rows, n, |i, j| z_cols[(i, j)] - z1[i]);
    let k = shifted.gram();
    let mnp = min_norm_point(&k, 50 * n + 100);
    let norm = T::one() / T::from_usize_lossy(t0.max(1));
    let objective = residual_sq(z1, z_cols, &mnp.lambda) * norm;
    Ok(JointSolution {
        x: mnp.lambda.clone(),
        w: mnp.lambda,
        zeta: Vec::new(),
        objective,
        iterations: mnp.iterations,
        status: mnp.status,
        kkt_residual: T::zero(),
        degenerate_units: Vec::new(),
        duplicate_groups: duplicate_groups_from_hessian(&k, None),
        objective_trace: Vec::new(),
    })
}

/// Unconstrained least squares `argmin ‖z1 − Z w‖²`.
pub fn solve_ols<T: Scalar>(z1: &[T], z_cols: &Matrix<T>) -> Result<Vec<T>> {
    check_design(z1, z_cols)?;
    let cond = spd_condition(&z_cols.gram());
    if !(cond < T::lit(1e12)) {
        return Err(Error::ill_posed(
            "design",
            format!("normal equations have condition number {:e}", cond.as_f64()),
        ));
    }
    let sol = lstsq(z_cols, z1, T::epsilon() * T::lit(16.0));
    if sol.rank < z_cols.cols() {
        return Err(Error::ill_posed(
            "design",
            "design matrix is rank deficient",
        ));
    }
    Ok(sol.coef)
}

/// `argmin_{λ ∈ simplex} (τ − λ)' M (τ − λ)` for symmetric PSD `M`.
pub fn project_metric<T: Scalar>(target: &[T], metric: &Matrix<T>) -> Result<Vec<T>> {
    let n = target.len();
    if n == 0 {
        return Err(Error::domain("cannot project an empty vector"));
    }
    if metric.rows() != n || metric.cols() != n {
        return Err(Error::domain(format!(
            "metric is {}×{}, target has length {n}",
            metric.rows(),
            metric.cols()
        )));
    }
    let scale = metric.max_abs().max(T::one());
    match metric.asymmetry() {
        Some(a) if a <= T::lit(1e-12) * scale => {}
        _ => return Err(Error::domain("metric must be symmetric")),
    }
    let k = match cholesky(metric) {
        Some(l) => {
            // points p_i = L'(e_i − τ)
            let lt_tau = l.tr_mul_vec(target);
            let lt = l.transpose();
            Matrix::from_fn(n, n, |r, i| lt[(r, i)] - lt_tau[r]).gram()
        }
        None => {
            let mt = metric.mul_vec(target);
            let tmt = dot(target, &mt);
            Matrix::from_fn(n, n, |i, j| metric[(i, j)] - mt[i] - mt[j] + tmt)
        }
    };
    Ok(min_norm_point(&k, 50 * n + 100).lambda)
}
