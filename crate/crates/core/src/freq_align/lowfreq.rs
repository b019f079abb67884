use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, Matrix};
use crate::optim::solve_simplex_ls;
use crate::panel::{FrequencyClass, LowFreqMode, UnitSeries};
use crate::Scalar;

/// Distributed-lag model `Y_t = α + Σ_{p=0}^{P} β_p' X_{t−p}` fitted to a
/// low-frequency donor, plus the within-cycle aggregation weights in
/// aggregate mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ReconstructionModel<T> {
    pub unit_id: String,
    pub alpha: T,
    /// `(P + 1) × Q`, row `p` holding `β_p`.
    pub beta: Matrix<T>,
    /// Aggregation weights `W_1..W_m̃` (aggregate mode only).
    pub agg_weights: Option<Vec<T>>,
    pub mode: LowFreqMode,
    pub diagnostics: ReconDiagnostics<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ReconDiagnostics<T> {
    /// Share of observed low-frequency variance explained by the fit.
    pub r_squared: T,
    pub n_obs: usize,
    /// Alternating least-squares sweeps (0 for point-sample fits).
    pub iterations: usize,
    /// False when the alternating scheme hit its iteration cap.
    pub converged: bool,
    /// Objective after each sweep (aggregate mode).
    pub objective_history: Vec<T>,
    /// True if some lag reached before `t = 1` and was backfilled with `X_1`.
    pub backfilled: bool,
}

/// Settings for the aggregate-mode alternating least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Restrict the aggregation weights to the simplex.
    pub nonneg_weights: bool,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            nonneg_weights: false,
        }
    }
}

/// `X_{t−p}` with pre-sample lags backfilled by `X_1`; `t` is 1-based.
fn lagged_row<T: Scalar>(x: &Matrix<T>, t: usize, p: usize) -> &[T] {
    x.row(t.saturating_sub(p).max(1) - 1)
}

fn low_freq_parts<T: Scalar>(
    series: &UnitSeries<T>,
) -> Result<(usize, LowFreqMode, &[(usize, T)], &Matrix<T>)> {
    let FrequencyClass::Lower { ratio, mode } = series.freq else {
        return Err(Error::domain(format!(
            "unit `{}` is not a low-frequency series",
            series.unit_id
        )));
    };
    let obs = series
        .sparse()
        .ok_or_else(|| Error::domain(format!("unit `{}` lacks sparse outcomes", series.unit_id)))?;
    let x = series
        .covariates
        .as_ref()
        .filter(|c| c.cols() > 0)
        .ok_or_else(|| {
            Error::sample_size(
                series.unit_id.clone(),
                "low-frequency reconstruction requires covariates",
            )
        })?;
    Ok((ratio, mode, obs, x))
}

fn rank_tol<T: Scalar>() -> T {
    T::effective_tol(1e-10).max(T::epsilon() * T::lit(1e3))
}

fn r_squared<T: Scalar>(y: &[T], ssr: T) -> T {
    let n = T::from_usize_lossy(y.len());
    let mean = y.iter().copied().sum::<T>() / n;
    let sst: T = y.iter().map(|v| (*v - mean) * (*v - mean)).sum();
    if sst > T::zero() {
        T::one() - ssr / sst
    } else {
        T::one()
    }
}

/// Ordinary least squares of the sampled outcomes on an intercept and
/// covariate lags `0..=P`, using only the observation times.
pub fn fit_low_freq_point_sample<T: Scalar>(
    series: &UnitSeries<T>,
    p: usize,
) -> Result<ReconstructionModel<T>> {
    let (_, mode, obs, x) = low_freq_parts(series)?;
    let q = x.cols();
    let k = (p + 1) * q + 1;
    if obs.len() <= k {
        return Err(Error::sample_size(
            series.unit_id.clone(),
            format!(
                "{} observations for {k} distributed-lag parameters",
                obs.len()
            ),
        ));
    }
    let mut backfilled = false;
    let design = Matrix::from_fn(obs.len(), k, |i, c| {
        if c == 0 {
            return T::one();
        }
        let (lag, qi) = ((c - 1) / q, (c - 1) % q);
        backfilled |= obs[i].0 <= lag;
        lagged_row(x, obs[i].0, lag)[qi]
    });
    let y: Vec<T> = obs.iter().map(|o| o.1).collect();
    let sol = lstsq(&design, &y, rank_tol());
    if sol.rank < k {
        return Err(Error::ill_posed(
            series.unit_id.clone(),
            format!("distributed-lag design has rank {} < {k}", sol.rank),
        ));
    }
    let fitted = design.mul_vec(&sol.coef);
    let ssr: T = y
        .iter()
        .zip(&fitted)
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum();
    Ok(ReconstructionModel {
        unit_id: series.unit_id.clone(),
        alpha: sol.coef[0],
        beta: Matrix::from_row_major(p + 1, q, sol.coef[1..].to_vec()),
        agg_weights: None,
        mode,
        diagnostics: ReconDiagnostics {
            r_squared: r_squared(&y, ssr),
            n_obs: obs.len(),
            iterations: 0,
            converged: true,
            objective_history: Vec::new(),
            backfilled,
        },
    })
}

/// Alternating least squares for the aggregate-mode model
/// `Y_c = Σ_s W_s (α + Σ_p β_p' X_{t_c − m̃ + s − p}) + e_c` with `Σ W = 1`.
pub fn fit_low_freq_aggregate<T: Scalar>(
    series: &UnitSeries<T>,
    p: usize,
    tol: f64,
    max_iter: usize,
) -> Result<ReconstructionModel<T>> {
    fit_low_freq_aggregate_with(
        series,
        p,
        AlsOptions {
            tol,
            max_iter,
            nonneg_weights: false,
        },
    )
}

pub fn fit_low_freq_aggregate_with<T: Scalar>(
    series: &UnitSeries<T>,
    p: usize,
    opts: AlsOptions,
) -> Result<ReconstructionModel<T>> {
    let (mt, mode, obs, x) = low_freq_parts(series)?;
    let unit = series.unit_id.as_str();
    let q = x.cols();
    let nb = (p + 1) * q;
    let need = nb + mt;
    if obs.len() < need.max(2) {
        return Err(Error::sample_size(
            unit,
            format!(
                "{} low-frequency observations, at least {need} required",
                obs.len()
            ),
        ));
    }
    if obs.iter().any(|&(t, _)| t < mt) {
        return Err(Error::domain(format!(
            "unit `{unit}`: aggregate observation before the first complete cycle"
        )));
    }
    let n = obs.len();
    let y: Vec<T> = obs.iter().map(|o| o.1).collect();
    let backfilled = obs.iter().any(|&(t, _)| t + 1 <= mt + p);
    let mtf = T::from_usize_lossy(mt);

    // lag values X_{t_c − m̃ + s − p}, indexed [c][s][p·q + qi]
    let cell = |c: usize, s: usize| -> Vec<T> {
        let t = obs[c].0 - mt + s + 1;
        (0..nb).map(|j| lagged_row(x, t, j / q)[j % q]).collect()
    };
    let cells: Vec<Vec<Vec<T>>> = (0..n)
        .map(|c| (0..mt).map(|s| cell(c, s)).collect())
        .collect();

    let objective = |alpha: T, beta: &[T], w: &[T]| -> T {
        (0..n)
            .map(|c| {
                let pred: T = (0..mt)
                    .map(|s| {
                        w[s] * (alpha
                            + cells[c][s]
                                .iter()
                                .zip(beta)
                                .map(|(a, b)| *a * *b)
                                .sum::<T>())
                    })
                    .sum();
                (y[c] - pred) * (y[c] - pred)
            })
            .sum()
    };

    let mut w = vec![T::one() / mtf; mt];
    let mut alpha = T::zero();
    let mut beta = vec![T::zero(); nb];
    let mut history: Vec<T> = Vec::new();
    let mut converged = false;
    let tol_t = T::effective_tol(opts.tol);
    let y_scale: T = y
        .iter()
        .map(|v| *v * *v)
        .sum::<T>()
        .max(T::min_positive_value());
    let floor = T::epsilon() * T::epsilon() * y_scale * T::lit(16.0);
    // increases below this are rounding noise in the residual sum
    let slack = T::epsilon() * y_scale;
    // nullspace basis of 1'W = 0: columns e_s − e_{m̃}
    let mut iterations = 0;
    for it in 0..opts.max_iter.max(1) {
        iterations = it + 1;
        // (α, β) step on W-aggregated covariates
        let agg = Matrix::from_fn(n, nb + 1, |c, j| {
            if j == 0 {
                w.iter().copied().sum()
            } else {
                (0..mt).map(|s| w[s] * cells[c][s][j - 1]).sum()
            }
        });
        let sol = lstsq(&agg, &y, rank_tol());
        if sol.rank < nb + 1 {
            return Err(Error::ill_posed(
                unit,
                format!(
                    "aggregated covariate design has rank {} < {}",
                    sol.rank,
                    nb + 1
                ),
            ));
        }
        alpha = sol.coef[0];
        beta.copy_from_slice(&sol.coef[1..]);

        // W step on fitted latent paths F[c][s]
        let f = Matrix::from_fn(n, mt, |c, s| {
            alpha
                + cells[c][s]
                    .iter()
                    .zip(&beta)
                    .map(|(a, b)| *a * *b)
                    .sum::<T>()
        });
        if opts.nonneg_weights {
            let sol = solve_simplex_ls(&y, &f, n).map_err(|e| e.for_unit(unit))?;
            w = sol.w;
        } else {
            let proj = Matrix::from_fn(n, mt - 1, |c, s| f[(c, s)] - f[(c, mt - 1)]);
            let rhs: Vec<T> = (0..n).map(|c| y[c] - f[(c, mt - 1)]).collect();
            let sol = lstsq(&proj, &rhs, rank_tol());
            if sol.rank < mt - 1 {
                return Err(Error::ill_posed(
                    unit,
                    format!(
                        "aggregation-weight design has rank {} < {}",
                        sol.rank,
                        mt - 1
                    ),
                ));
            }
            let last = T::one() - sol.coef.iter().copied().sum::<T>();
            w = sol.coef;
            w.push(last);
        }

        let obj = objective(alpha, &beta, &w);
        if let Some(&prev) = history.last() {
            debug_assert!(
                obj <= prev + prev.abs() * T::lit(1e-9) + slack,
                "alternating least squares objective increased: {prev} -> {obj}"
            );
            history.push(obj);
            if obj <= floor || (prev - obj) <= tol_t * prev.abs() + slack {
                converged = true;
                break;
            }
        } else {
            history.push(obj);
            if obj <= floor {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("unit `{unit}`: alternating least squares stopped after {iterations} sweeps");
    }

    let ssr = *history.last().unwrap_or(&T::zero());
    Ok(ReconstructionModel {
        unit_id: unit.to_string(),
        alpha,
        beta: Matrix::from_row_major(p + 1, q, beta),
        agg_weights: Some(w),
        mode,
        diagnostics: ReconDiagnostics {
            r_squared: r_squared(&y, ssr),
            n_obs: n,
            iterations,
            converged,
            objective_history: history,
            backfilled,
        },
    })
}

/// Dispatches on the unit's declared low-frequency mode.
pub fn fit_low_freq<T: Scalar>(
    series: &UnitSeries<T>,
    p: usize,
    opts: AlsOptions,
) -> Result<ReconstructionModel<T>> {
    match series.freq {
        FrequencyClass::Lower {
            mode: LowFreqMode::Aggregate,
            ..
        } => fit_low_freq_aggregate_with(series, p, opts),
        FrequencyClass::Lower { .. } => fit_low_freq_point_sample(series, p),
        _ => Err(Error::domain(format!(
            "unit `{}` is not a low-frequency series",
            series.unit_id
        ))),
    }
}

/// `Ŷ_t = α + Σ_p β_p' X_{t−p}` for every baseline period covered by the
/// unit's covariates.
pub fn reconstruct_baseline<T: Scalar>(
    model: &ReconstructionModel<T>,
    series: &UnitSeries<T>,
) -> Result<Vec<T>> {
    if model.unit_id != series.unit_id {
        return Err(Error::domain(format!(
            "model fitted for `{}` applied to `{}`",
            model.unit_id, series.unit_id
        )));
    }
    let x = series
        .covariates
        .as_ref()
        .ok_or_else(|| Error::domain(format!("unit `{}` has no covariates", series.unit_id)))?;
    if x.cols() != model.beta.cols() {
        return Err(Error::domain(format!(
            "unit `{}`: model has {} covariates, series has {}",
            series.unit_id,
            model.beta.cols(),
            x.cols()
        )));
    }
    Ok(reconstruct_from_covariates(model, x))
}

pub(crate) fn reconstruct_from_covariates<T: Scalar>(
    model: &ReconstructionModel<T>,
    x: &Matrix<T>,
) -> Vec<T> {
    (1..=x.rows())
        .map(|t| {
            let mut v = model.alpha;
            for lag in 0..model.beta.rows() {
                for (b, xv) in model.beta.row(lag).iter().zip(lagged_row(x, t, lag)) {
                    v += *b * *xv;
                }
            }
            v
        })
        .collect()
}
