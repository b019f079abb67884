//! Block-subsampling bootstrap intervals for the average treatment effect.
//!
//! Each replicate draws one contiguous pre-treatment block of length `m`,
//! re-estimates the unit weights on that block (alignment and low-frequency
//! reconstructions stay frozen at the full-sample fit), and combines the
//! weight perturbation with simulated post-treatment noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{aligned_outcomes, EffectSeries, FitResult, Variant};
use crate::linalg::Matrix;
use crate::optim::solve_simplex_ls;
use crate::panel::{FrequencyClass, MixedPanel};
use crate::Scalar;

/// Block length as a function of `T0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum BlockRule {
    /// `⌊T0^a⌋`.
    Pow {
        a: f64,
    },
    Fixed {
        m: usize,
    },
    /// `max(min_m, ⌊T0^a⌋)`.
    FloorPowWithMin {
        a: f64,
        min_m: usize,
    },
}

impl Default for BlockRule {
    fn default() -> Self {
        BlockRule::Pow { a: 0.8 }
    }
}

impl BlockRule {
    pub fn block_size(&self, t0: usize) -> Result<usize> {
        let pow = |a: f64| -> Result<usize> {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::config(
                    "block_rule",
                    format!("exponent {a} must lie in (0,1)"),
                ));
            }
            Ok((t0 as f64).powf(a).floor() as usize)
        };
        let m = match *self {
            BlockRule::Pow { a } => pow(a)?,
            BlockRule::Fixed { m } => m,
            BlockRule::FloorPowWithMin { a, min_m } => pow(a)?.max(min_m),
        };
        if m < 2 {
            return Err(Error::config(
                "block_rule",
                format!("block size {m} is below 2"),
            ));
        }
        if m >= t0 {
            return Err(Error::config(
                "block_rule",
                format!("block size {m} must be smaller than T0 = {t0}"),
            ));
        }
        Ok(m)
    }
}

impl std::str::FromStr for BlockRule {
    type Err = Error;

    /// Parses `pow:A`, `fixed:M` or `minpow:A:MIN`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::config(
                "block_rule",
                format!("cannot parse `{s}` (expected pow:A, fixed:M or minpow:A:MIN)"),
            )
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["pow", a] => Ok(BlockRule::Pow {
                a: a.parse().map_err(|_| bad())?,
            }),
            ["fixed", m] => Ok(BlockRule::Fixed {
                m: m.parse().map_err(|_| bad())?,
            }),
            ["minpow", a, min] => Ok(BlockRule::FloorPowWithMin {
                a: a.parse().map_err(|_| bad())?,
                min_m: min.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub block_rule: BlockRule,
    pub seed: u64,
    /// Confidence level, e.g. `0.90`.
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 1000,
            block_rule: BlockRule::default(),
            seed: 0,
            level: 0.90,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config("level", "level must lie in (0,1)"));
        }
        if self.n_boot == 0 {
            return Err(Error::config("n_boot", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct CiResult<T> {
    pub ate: T,
    pub sigma_v_hat: T,
    /// Bootstrap statistics in replicate order.
    pub boot_stats: Vec<T>,
    pub ci_lower: T,
    pub ci_upper: T,
    pub level: f64,
    pub n_boot: usize,
    pub block_size: usize,
    pub seed: u64,
}

impl<T: Scalar> CiResult<T> {
    /// Interval from the same bootstrap sample at another confidence level.
    pub fn at_level(&self, level: f64, t1: usize) -> Result<(T, T)> {
        let mut sorted = self.boot_stats.clone();
        sort_stats(&mut sorted);
        percentile_interval(self.ate, &sorted, t1, level)
    }
}

/// `T1^{−1} Σ_t (α̂_t − α̂)²`.
pub fn sigma_v_hat<T: Scalar>(effects: &EffectSeries<T>) -> Result<T> {
    let n = effects.effects.len();
    if n < 2 {
        return Err(Error::sample_size(
            "treated",
            format!("{n} post-treatment periods, at least 2 required"),
        ));
    }
    let nf = T::from_usize_lossy(n);
    let mean = effects.effects.iter().copied().sum::<T>() / nf;
    Ok(effects
        .effects
        .iter()
        .map(|e| (*e - mean) * (*e - mean))
        .sum::<T>()
        / nf)
}

fn sort_stats<T: Scalar>(v: &mut [T]) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
}

/// Order statistic `⌈q·N⌉` (1-based), clamped to `[1, N]`.
fn order_stat<T: Scalar>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[idx - 1]
}

/// `[ate − E*_{(1−α/2)}/√T1, ate − E*_{(α/2)}/√T1]` with `α = 1 − level`.
pub fn percentile_interval<T: Scalar>(
    ate: T,
    sorted: &[T],
    t1: usize,
    level: f64,
) -> Result<(T, T)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config("level", "level must lie in (0,1)"));
    }
    if sorted.is_empty() {
        return Err(Error::domain("empty bootstrap sample"));
    }
    let alpha = 1.0 - level;
    let s = T::one() / T::from_usize_lossy(t1).sqrt();
    let lower = ate - s * order_stat(sorted, 1.0 - alpha / 2.0);
    let upper = ate - s * order_stat(sorted, alpha / 2.0);
    Ok((lower, upper))
}

/// Donors whose columns enter the bootstrap re-estimation.
fn eligible_columns<T: Scalar>(fit: &FitResult<T>, panel: &MixedPanel<T>) -> Vec<usize> {
    (0..panel.donors.len())
        .filter(|&j| {
            let d = &panel.donors[j];
            match d.freq {
                FrequencyClass::Same => true,
                FrequencyClass::Lower { .. } => fit.recon_models.contains_key(&d.unit_id),
                FrequencyClass::Higher { .. } => fit.config.variant != Variant::BaselineOnly,
            }
        })
        .collect()
}

/// Per-replicate generator: counter-based stream `n` under the master seed.
fn replicate_rng(seed: u64, n: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    rng
}

/// Block-subsampling bootstrap interval for the ATE. Replicates run in
/// parallel and are reduced by index, so the result does not depend on the
/// thread count.
pub fn block_bootstrap_ci<T: Scalar>(
    panel: &MixedPanel<T>,
    fit: &FitResult<T>,
    effects: &EffectSeries<T>,
    config: &BootstrapConfig,
) -> Result<CiResult<T>> {
    config.validate()?;
    let (t0, t1) = (panel.t0, panel.t1);
    if effects.effects.len() != t1 {
        return Err(Error::domain(
            "effect series does not match the panel's post-treatment window",
        ));
    }
    let m = config.block_rule.block_size(t0)?;
    let sv = sigma_v_hat(effects)?;
    let sd = sv.sqrt();

    let ytilde = aligned_outcomes(fit, panel)?;
    let cols = eligible_columns(fit, panel);
    let w_all = fit.weight_vector();
    let w_hat: Vec<T> = cols.iter().map(|&j| w_all[j]).collect();
    let y1 = panel.treated_outcomes();
    let t1f = T::from_usize_lossy(t1);
    // T1^{-1} Σ_{t>T0} Ỹ_t over eligible donors
    let ybar_post: Vec<T> = cols
        .iter()
        .map(|&j| (t0..t0 + t1).map(|t| ytilde[(t, j)]).sum::<T>() / t1f)
        .collect();
    let weight_scale = -(t1f / T::from_usize_lossy(t0)).sqrt() * T::from_usize_lossy(m).sqrt();
    let noise_scale = T::one() / t1f.sqrt();
    let n_starts = t0 - m + 1;

    let stats: Vec<T> = (0..config.n_boot)
        .into_par_iter()
        .map(|n| -> Result<T> {
            let mut rng = replicate_rng(config.seed, n);
            let b = rng.random_range(0..n_starts);
            let block = Matrix::from_fn(m, cols.len(), |i, c| ytilde[(b + i, cols[c])]);
            let sol = solve_simplex_ls(&y1[b..b + m], &block, m)?;
            let drift: T = ybar_post
                .iter()
                .zip(sol.w.iter().zip(&w_hat))
                .map(|(yb, (ws, wh))| *yb * (*ws - *wh))
                .sum();
            let noise: T = (0..t1)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::lit(z) * sd
                })
                .sum();
            Ok(weight_scale * drift + noise_scale * noise)
        })
        .collect::<Result<_>>()?;

    let mut sorted = stats.clone();
    sort_stats(&mut sorted);
    let (ci_lower, ci_upper) = percentile_interval(effects.ate, &sorted, t1, config.level)?;
    Ok(CiResult {
        ate: effects.ate,
        sigma_v_hat: sv,
        boot_stats: stats,
        ci_lower,
        ci_upper,
        level: config.level,
        n_boot: config.n_boot,
        block_size: m,
        seed: config.seed,
    })
}
