//! End-to-end estimation: alignment, joint weight fit, counterfactuals,
//! treatment effects and placebo-in-time refits.

use std::ops::RangeInclusive;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq_align::{
    align_high_freq, build_midas_weights, fit_low_freq, reconstruct_from_covariates, AlsOptions,
    LagPolyBasis, MidasWeights, ReconstructionModel,
};
use crate::linalg::Matrix;
use crate::optim::{build_lifted_problem, solve_joint, AlignedDesign, DesignColumn, SolveStatus};
use crate::panel::{validate_panel, FrequencyClass, MixedPanel};
use crate::Scalar;

/// Which feasible class the weights are estimated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full mixed-frequency estimator.
    #[default]
    Mfscm,
    /// High-frequency donors aggregated with flat weights `1/m`.
    NoMidas,
    /// Only same-frequency donors may receive weight.
    BaselineOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Mfscm, Variant::NoMidas, Variant::BaselineOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Mfscm => "mfscm",
            Variant::NoMidas => "no-midas",
            Variant::BaselineOnly => "baseline-only",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfscm" => Ok(Variant::Mfscm),
            "no-midas" => Ok(Variant::NoMidas),
            "baseline-only" => Ok(Variant::BaselineOnly),
            other => Err(Error::config(
                "variant",
                format!("unknown variant `{other}`"),
            )),
        }
    }
}

/// Estimation settings. Every field has a default, so a manifest may omit
/// any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Covariate lag order `P` of the reconstruction model (lags `0..=P`).
    pub lag_order: usize,
    /// Number of dictionary functions `L`.
    pub basis_degree: usize,
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub als_tol: f64,
    pub als_max_iter: usize,
    /// Require every per-lag MIDAS weight to be nonnegative.
    pub nonneg_midas: bool,
    /// Restrict low-frequency aggregation weights to the simplex.
    pub nonneg_agg_weights: bool,
    /// Multiplier for covariate rows; `None` means `1/√T0`.
    pub covariate_scale: Option<f64>,
    pub variant: Variant,
    /// Exclude low-frequency donors with too few observations to reconstruct
    /// instead of failing.
    pub drop_short_lower: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            lag_order: 1,
            basis_degree: 3,
            kkt_tol: 1e-10,
            max_iter: 50_000,
            als_tol: 1e-8,
            als_max_iter: 200,
            nonneg_midas: true,
            nonneg_agg_weights: false,
            covariate_scale: None,
            variant: Variant::Mfscm,
            drop_short_lower: false,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.basis_degree == 0 {
            return Err(Error::config("basis_degree", "must be at least 1"));
        }
        for (key, v) in [("kkt_tol", self.kkt_tol), ("als_tol", self.als_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be a positive finite number"));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be at least 1"));
        }
        if self.als_max_iter == 0 {
            return Err(Error::config("als_max_iter", "must be at least 1"));
        }
        if let Some(s) = self.covariate_scale {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::config(
                    "covariate_scale",
                    "must be a nonnegative finite number",
                ));
            }
        }
        Ok(())
    }

    fn als_options(&self) -> AlsOptions {
        AlsOptions {
            tol: self.als_tol,
            max_iter: self.als_max_iter,
            nonneg_weights: self.nonneg_agg_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SolverReport<T> {
    pub iterations: usize,
    pub status: SolveStatus,
    pub kkt_residual: T,
    /// High-frequency donors whose weight vanished; their MIDAS weights are
    /// reported flat.
    pub degenerate_units: Vec<String>,
    /// Donors with identical design columns (weight split not identified).
    pub duplicate_groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FitResult<T> {
    /// Unit weight per donor, in panel order.
    pub weights: IndexMap<String, T>,
    pub midas: IndexMap<String, MidasWeights<T>>,
    pub recon_models: IndexMap<String, ReconstructionModel<T>>,
    /// Mean squared pre-treatment outcome gap.
    pub pre_mse: T,
    /// Value of the stacked objective at the solution.
    pub objective: T,
    pub diagnostics: Vec<String>,
    pub solver: SolverReport<T>,
    pub t0: usize,
    pub config: EstimationConfig,
}

impl<T: Scalar> FitResult<T> {
    pub fn weight_vector(&self) -> Vec<T> {
        self.weights.values().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct EffectSeries<T> {
    /// Last pre-treatment period; `effects[i]` belongs to `t = t0 + 1 + i`.
    pub t0: usize,
    pub effects: Vec<T>,
    pub ate: T,
}

impl<T: Scalar> EffectSeries<T> {
    pub fn from_effects(t0: usize, effects: Vec<T>) -> Self {
        let ate = if effects.is_empty() {
            T::zero()
        } else {
            effects.iter().copied().sum::<T>() / T::from_usize_lossy(effects.len())
        };
        Self { t0, effects, ate }
    }

    pub fn t1(&self) -> usize {
        self.effects.len()
    }
}

fn eligible(panel_freq: &FrequencyClass, variant: Variant) -> bool {
    !matches!(
        (variant, panel_freq),
        (
            Variant::BaselineOnly,
            FrequencyClass::Lower { .. } | FrequencyClass::Higher { .. }
        )
    )
}

/// Fits unit weights and MIDAS coefficients on the pre-treatment window.
pub fn fit<T: Scalar>(panel: &MixedPanel<T>, config: &EstimationConfig) -> Result<FitResult<T>> {
    config.validate()?;
    if panel.donors.is_empty() {
        return Err(Error::domain("donor pool is empty"));
    }
    let diags = validate_panel(panel);
    if !diags.is_empty() {
        return Err(Error::Validation(
            diags.iter().map(ToString::to_string).collect(),
        ));
    }
    let (t0, q) = (panel.t0, panel.q);
    let basis = LagPolyBasis::new(config.basis_degree)?;
    let variant = config.variant;
    let mut diagnostics = Vec::new();

    let mut recon_models = IndexMap::new();
    let mut columns = Vec::new();
    let mut col_donor = Vec::new();
    let scale = config
        .covariate_scale
        .map(T::lit)
        .unwrap_or_else(|| AlignedDesign::<T>::default_scale(t0));
    for (j, donor) in panel.donors.iter().enumerate() {
        if !eligible(&donor.freq, variant) {
            continue;
        }
        let cov = donor.covariates.as_ref();
        let column = match donor.freq {
            FrequencyClass::Same => {
                let y = donor.baseline().expect("validated same-frequency outcomes");
                DesignColumn::Fixed(AlignedDesign::stack(y, cov, t0, q, scale))
            }
            FrequencyClass::Lower { .. } => {
                let pre = donor.truncated(t0);
                let model = match fit_low_freq(&pre, config.lag_order, config.als_options()) {
                    Ok(m) => m,
                    Err(Error::SampleSize { message, .. }) if config.drop_short_lower => {
                        diagnostics.push(format!("unit `{}` excluded: {message}", donor.unit_id));
                        continue;
                    }
                    Err(e) => return Err(e.for_unit(&donor.unit_id)),
                };
                if !model.diagnostics.converged {
                    diagnostics.push(format!(
                        "unit `{}`: reconstruction did not converge in {} sweeps",
                        donor.unit_id, model.diagnostics.iterations
                    ));
                }
                if model.diagnostics.backfilled {
                    diagnostics.push(format!(
                        "unit `{}`: covariate lags before t = 1 backfilled with X_1",
                        donor.unit_id
                    ));
                }
                let x = cov.expect("validated covariates");
                let yhat = reconstruct_from_covariates(&model, x);
                recon_models.insert(donor.unit_id.clone(), model);
                DesignColumn::Fixed(AlignedDesign::stack(&yhat, cov, t0, q, scale))
            }
            FrequencyClass::Higher { ratio } => {
                let hf = donor
                    .high_freq()
                    .expect("validated high-frequency outcomes");
                if variant == Variant::NoMidas {
                    let flat =
                        MidasWeights::uniform(ratio, &basis)?.with_unit(donor.unit_id.clone());
                    let y = align_high_freq(donor, &flat)?;
                    DesignColumn::Fixed(AlignedDesign::stack(&y, cov, t0, q, scale))
                } else {
                    DesignColumn::HighFreq {
                        outcomes: Matrix::from_fn(t0, ratio, |t, k| hf[(t, k)]),
                        covariates: AlignedDesign::covariate_rows(cov, t0, q, scale),
                    }
                }
            }
        };
        columns.push(column);
        col_donor.push(j);
    }
    if columns.is_empty() {
        return Err(Error::domain(format!(
            "variant `{}` leaves no eligible donors",
            variant.as_str()
        )));
    }

    let design = AlignedDesign {
        z1: AlignedDesign::stack(
            panel.treated_outcomes(),
            panel.treated.covariates.as_ref(),
            t0,
            q,
            scale,
        ),
        columns,
        t0,
        q,
        covariate_scale: scale,
    };
    let qp = build_lifted_problem(&design, &basis, config.nonneg_midas)?;
    let sol = solve_joint(&qp, config.kkt_tol, config.max_iter);
    if sol.status != SolveStatus::Converged {
        diagnostics.push(format!(
            "solver stopped with status {:?} after {} iterations (KKT residual {:e})",
            sol.status,
            sol.iterations,
            sol.kkt_residual.as_f64()
        ));
        log::warn!("joint solver status {:?}", sol.status);
    }

    let mut weights: IndexMap<String, T> = panel
        .donors
        .iter()
        .map(|d| (d.unit_id.clone(), T::zero()))
        .collect();
    for (ci, &j) in col_donor.iter().enumerate() {
        weights[j] = sol.w[ci];
    }
    let mut midas = IndexMap::new();
    for (ci, zeta) in &sol.zeta {
        let donor = &panel.donors[col_donor[*ci]];
        let FrequencyClass::Higher { ratio } = donor.freq else {
            unreachable!()
        };
        midas.insert(
            donor.unit_id.clone(),
            build_midas_weights(zeta, ratio, &basis)?.with_unit(donor.unit_id.clone()),
        );
    }
    for donor in &panel.donors {
        if let FrequencyClass::Higher { ratio } = donor.freq {
            if !midas.contains_key(&donor.unit_id) {
                midas.insert(
                    donor.unit_id.clone(),
                    MidasWeights::uniform(ratio, &basis)?.with_unit(donor.unit_id.clone()),
                );
            }
        }
    }
    let name = |ci: usize| panel.donors[col_donor[ci]].unit_id.clone();
    let solver = SolverReport {
        iterations: sol.iterations,
        status: sol.status,
        kkt_residual: sol.kkt_residual,
        degenerate_units: sol.degenerate_units.iter().map(|&c| name(c)).collect(),
        duplicate_groups: sol
            .duplicate_groups
            .iter()
            .map(|g| g.iter().map(|&c| name(c)).collect())
            .collect(),
    };
    if !solver.duplicate_groups.is_empty() {
        diagnostics.push("identical donor columns: weights are not unique".to_string());
    }
    for u in &solver.degenerate_units {
        diagnostics.push(format!(
            "unit `{u}`: zero weight, MIDAS weights reported flat"
        ));
    }

    let mut result = FitResult {
        weights,
        midas,
        recon_models,
        pre_mse: T::zero(),
        objective: sol.objective,
        diagnostics,
        solver,
        t0,
        config: config.clone(),
    };
    let cf = counterfactual(&result, panel, 1..=t0)?;
    let y = panel.treated_outcomes();
    result.pre_mse = cf
        .iter()
        .zip(y)
        .map(|(c, v)| (*v - *c) * (*v - *c))
        .sum::<T>()
        / T::from_usize_lossy(t0);
    Ok(result)
}

/// Baseline-frequency donor outcomes `Ỹ` (`T × J`) at the fitted alignment:
/// raw same-frequency series, frozen reconstructions for low-frequency
/// donors and MIDAS aggregates for high-frequency donors. Columns of
/// zero-weight donors without a fitted model are left at zero.
pub fn aligned_outcomes<T: Scalar>(fit: &FitResult<T>, panel: &MixedPanel<T>) -> Result<Matrix<T>> {
    let horizon = panel.horizon();
    let mut out = Matrix::zeros(horizon, panel.donors.len());
    for (j, donor) in panel.donors.iter().enumerate() {
        let w = fit.weights.get(&donor.unit_id).copied().ok_or_else(|| {
            Error::domain(format!("fit has no weight for donor `{}`", donor.unit_id))
        })?;
        let col: Option<Vec<T>> = match donor.freq {
            FrequencyClass::Same => donor.baseline().map(<[T]>::to_vec),
            FrequencyClass::Lower { .. } => match fit.recon_models.get(&donor.unit_id) {
                Some(model) => {
                    let x = donor.covariates.as_ref().ok_or_else(|| {
                        Error::domain(format!("unit `{}` has no covariates", donor.unit_id))
                    })?;
                    Some(reconstruct_from_covariates(model, x))
                }
                None => None,
            },
            FrequencyClass::Higher { .. } => match fit.midas.get(&donor.unit_id) {
                Some(mw) => Some(align_high_freq(donor, mw)?),
                None => None,
            },
        };
        match col {
            Some(c) => {
                if c.len() != horizon {
                    return Err(Error::domain(format!(
                        "unit `{}` spans {} periods, panel spans {horizon}",
                        donor.unit_id,
                        c.len()
                    )));
                }
                for (t, v) in c.into_iter().enumerate() {
                    out[(t, j)] = v;
                }
            }
            None if w == T::zero() => {}
            None => {
                return Err(Error::domain(format!(
                    "no alignment available for weighted donor `{}`",
                    donor.unit_id
                )))
            }
        }
    }
    Ok(out)
}

/// `Ŷ^N_{1,t} = Σ_j ŵ_j Ỹ_{j,t}` for `t` in `range` (1-based, inclusive).
pub fn counterfactual<T: Scalar>(
    fit: &FitResult<T>,
    panel: &MixedPanel<T>,
    range: RangeInclusive<usize>,
) -> Result<Vec<T>> {
    let horizon = panel.horizon();
    if range.is_empty() || *range.start() < 1 || *range.end() > horizon {
        return Err(Error::domain(format!(
            "range {}..={} outside 1..={horizon}",
            range.start(),
            range.end()
        )));
    }
    let ytilde = aligned_outcomes(fit, panel)?;
    let w = fit.weight_vector();
    Ok(range
        .map(|t| crate::linalg::dot(ytilde.row(t - 1), &w))
        .collect())
}

/// Per-period effects `Y_{1,t} − Ŷ^N_{1,t}` over the post-treatment window and
/// their mean.
pub fn effects<T: Scalar>(fit: &FitResult<T>, panel: &MixedPanel<T>) -> Result<EffectSeries<T>> {
    if panel.t1 == 0 {
        return Err(Error::domain("post-treatment period empty"));
    }
    let t0 = panel.t0;
    let cf = counterfactual(fit, panel, t0 + 1..=panel.horizon())?;
    let y = panel.treated_outcomes();
    let eff = cf.iter().enumerate().map(|(i, c)| y[t0 + i] - *c).collect();
    Ok(EffectSeries::from_effects(t0, eff))
}

/// Refits with a pseudo treatment date `pseudo_t0 < T0` and evaluates the
/// pseudo-effects on `(pseudo_t0, T0]`. True post-treatment data is dropped
/// before fitting.
pub fn placebo_in_time<T: Scalar>(
    panel: &MixedPanel<T>,
    pseudo_t0: usize,
    config: &EstimationConfig,
) -> Result<(FitResult<T>, EffectSeries<T>)> {
    if pseudo_t0 == 0 || pseudo_t0 >= panel.t0 {
        return Err(Error::domain(format!(
            "pseudo treatment date {pseudo_t0} must lie strictly inside 1..{}",
            panel.t0
        )));
    }
    let placebo = panel.truncated(panel.t0, pseudo_t0);
    let f = fit(&placebo, config)?;
    let e = effects(&f, &placebo)?;
    Ok((f, e))
}

#[cfg(test)]
mod tests;
