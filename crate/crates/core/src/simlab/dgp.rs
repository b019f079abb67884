use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq_align::{build_midas_weights, zeta_for_weights, LagPolyBasis};
use crate::linalg::Matrix;
use crate::panel::{LowFreqMode, MixedPanel, UnitSeries};

/// Parametric MIDAS weight shapes used to generate oracle weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OracleShape {
    /// `∝ exp(ζ1·k + ζ2·k²)`, `k = 1..m`.
    ExpAlmon { z1: f64, z2: f64 },
    /// Beta density on `x_k = (k−1)/(m−1)`, clamped into the open interval.
    Beta { z1: f64, z2: f64 },
    /// `∝ (m, m−1, …, 1)`.
    FrontLoaded,
}

/// Normalized per-lag weights of length `m` for the given shape.
pub fn oracle_midas_shapes(kind: &OracleShape, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::domain("m must be at least 1"));
    }
    let raw: Vec<f64> = match *kind {
        OracleShape::ExpAlmon { z1, z2 } => {
            let e: Vec<f64> = (1..=m)
                .map(|k| z1 * k as f64 + z2 * (k * k) as f64)
                .collect();
            let top = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            e.iter().map(|v| (v - top).exp()).collect()
        }
        OracleShape::Beta { z1, z2 } => {
            if !(z1 > 0.0 && z2 > 0.0) {
                return Err(Error::domain(format!(
                    "beta lag parameters must be positive, got ({z1}, {z2})"
                )));
            }
            if m == 1 {
                vec![1.0]
            } else {
                let eps = f64::EPSILON;
                (0..m)
                    .map(|k| {
                        let x = (k as f64 / (m - 1) as f64).clamp(eps, 1.0 - eps);
                        x.powf(z1 - 1.0) * (1.0 - x).powf(z2 - 1.0)
                    })
                    .collect()
            }
        }
        OracleShape::FrontLoaded => (0..m).map(|k| (m - k) as f64).collect(),
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|v| v / total).collect())
}

/// Simulation design. Structural parameters are drawn once from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    /// Number of donors.
    pub j: usize,
    pub q: usize,
    /// Number of covariate lags in the outcome equations (`0..P−1`).
    pub p: usize,
    pub sigma: f64,
    pub sigma_h: f64,
    pub sigma_u: f64,
    /// Sub-periods per period for high-frequency donors.
    pub m: usize,
    /// Periods per cycle for low-frequency donors.
    pub m_tilde: usize,
    pub basis_degree: usize,
    pub midas_shape: OracleShape,
    /// Constant treatment effect added after `T0`.
    pub effect: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            j: 20,
            q: 3,
            p: 2,
            sigma: 1.0,
            sigma_h: 1.0,
            sigma_u: 0.5,
            m: 3,
            m_tilde: 4,
            basis_degree: 3,
            midas_shape: OracleShape::FrontLoaded,
            effect: 0.0,
            seed: 2024,
        }
    }
}

impl DgpConfig {
    /// Group sizes `(|same|, |lower|, |higher|)`.
    pub fn group_sizes(&self) -> (usize, usize, usize) {
        let j1 = self.j / 3;
        let j2 = 2 * self.j / 3;
        (j1, j2 - j1, self.j - j2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 3 {
            return Err(Error::config(
                "J",
                "at least 3 donors are needed (one per frequency group)",
            ));
        }
        if self.q == 0 || self.p == 0 {
            return Err(Error::config("q", "Q and P must be positive"));
        }
        if self.m < 2 || self.m_tilde < 2 {
            return Err(Error::config("m", "frequency ratios must be at least 2"));
        }
        for (k, v) in [
            ("sigma", self.sigma),
            ("sigma_h", self.sigma_h),
            ("sigma_u", self.sigma_u),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(k, "must be a nonnegative finite number"));
            }
        }
        LagPolyBasis::new(self.basis_degree)?;
        Ok(())
    }

    /// Draws the structural parameters that stay fixed across a grid.
    pub fn build(&self) -> Result<Dgp> {
        self.validate()?;
        let (j1, j2, j3) = self.group_sizes();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let u3 = Uniform::new(-3.0, 3.0).expect("valid range");
        let u1 = Uniform::new(-1.0, 1.0).expect("valid range");
        let phi: Vec<Vec<f64>> = (0..self.j)
            .map(|_| (0..self.q).map(|_| rng.sample(u3)).collect())
            .collect();
        let phi_h: Vec<Vec<f64>> = (0..j3)
            .map(|_| (0..self.q).map(|_| rng.sample(u3)).collect())
            .collect();
        let beta: Vec<Vec<f64>> = (0..self.p)
            .map(|_| (0..self.q).map(|_| rng.sample(u1)).collect())
            .collect();
        let beta_h: Vec<Vec<f64>> = (0..self.p)
            .map(|_| (0..self.q).map(|_| rng.sample(u1)).collect())
            .collect();
        let mut oracle_w = Vec::with_capacity(self.j);
        for size in [j1, j2, j3] {
            let scores: Vec<f64> = (0..size).map(|_| rng.sample(StandardNormal)).collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = e.iter().sum();
            oracle_w.extend(e.iter().map(|v| v / total / 3.0));
        }
        let basis = LagPolyBasis::new(self.basis_degree)?;
        let shape = oracle_midas_shapes(&self.midas_shape, self.m)?;
        let zeta = zeta_for_weights(&shape, &basis)?;
        let lag_weights = build_midas_weights(&zeta, self.m, &basis)?.weights;
        Ok(Dgp {
            config: self.clone(),
            phi,
            phi_h,
            beta,
            beta_h,
            oracle_w,
            oracle_zeta: vec![zeta; j3],
            oracle_lag_weights: vec![lag_weights; j3],
        })
    }
}

/// A design with its structural draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dgp {
    pub config: DgpConfig,
    /// Covariate means per donor.
    pub phi: Vec<Vec<f64>>,
    /// Latent high-frequency covariate means per high-frequency donor.
    pub phi_h: Vec<Vec<f64>>,
    /// `β_p`, `p = 0..P−1`.
    pub beta: Vec<Vec<f64>>,
    pub beta_h: Vec<Vec<f64>>,
    /// Oracle unit weights in donor order.
    pub oracle_w: Vec<f64>,
    /// Oracle dictionary coefficients per high-frequency donor.
    pub oracle_zeta: Vec<Vec<f64>>,
    pub oracle_lag_weights: Vec<Vec<f64>>,
}

impl Dgp {
    pub fn donor_ids(&self) -> Vec<String> {
        let (j1, j2, _) = self.config.group_sizes();
        (0..self.config.j)
            .map(|j| {
                let tag = if j < j1 {
                    "same"
                } else if j < j1 + j2 {
                    "low"
                } else {
                    "high"
                };
                format!("{tag}{:02}", j + 1)
            })
            .collect()
    }
}

/// Simulation truth accompanying a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTruth {
    pub oracle_w: Vec<f64>,
    pub oracle_lag_weights: Vec<Vec<f64>>,
    /// `T × J` oracle-aligned donor outcomes (latent paths for baseline and
    /// low-frequency donors, oracle MIDAS aggregates for high-frequency ones).
    pub aligned: Matrix<f64>,
    /// `T × J` noise-free distributed-lag part `α0 + Σ β_p' X_{t−p}` for
    /// baseline and low-frequency donors (zero for high-frequency donors).
    pub systematic: Matrix<f64>,
    /// Treated outcome without treatment.
    pub untreated: Vec<f64>,
    pub effect: f64,
}

fn covariate_draws(rng: &mut ChaCha8Rng, rows: usize, mean: &[f64]) -> Matrix<f64> {
    Matrix::from_fn(rows, mean.len(), |_, q| {
        mean[q] + rng.sample::<f64, _>(StandardNormal)
    })
}

/// Generates one panel with `T = t0 + t1` periods. Pre-sample covariate lags
/// repeat the first period.
pub fn gen_panel(
    dgp: &Dgp,
    t0: usize,
    t1: usize,
    rep_seed: u64,
) -> Result<(MixedPanel<f64>, OracleTruth)> {
    let c = &dgp.config;
    if t0 == 0 || t1 == 0 {
        return Err(Error::config("T0", "T0 and T1 must be positive"));
    }
    let horizon = t0 + t1;
    let (j1, j2, _) = c.group_sizes();
    let ids = dgp.donor_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let noise = |sd: f64| Normal::new(0.0, sd).expect("finite sd");
    let (eps, eps_h, eps_u) = (noise(c.sigma), noise(c.sigma_h), noise(c.sigma_u));
    let dl = |beta: &[Vec<f64>], x: &Matrix<f64>, t: usize| -> f64 {
        // t is 0-based; lag rows before 0 repeat row 0
        beta.iter()
            .enumerate()
            .map(|(p, b)| {
                let row = x.row(t.saturating_sub(p));
                b.iter().zip(row).map(|(bi, xi)| bi * xi).sum::<f64>()
            })
            .sum()
    };

    let mut donors = Vec::with_capacity(c.j);
    let mut aligned = Matrix::zeros(horizon, c.j);
    let mut systematic = Matrix::zeros(horizon, c.j);
    let mut covs = Vec::with_capacity(c.j);
    for j in 0..c.j {
        let x = covariate_draws(&mut rng, horizon, &dgp.phi[j]);
        if j < j1 + j2 {
            let latent: Vec<f64> = (0..horizon)
                .map(|t| {
                    let s = dl(&dgp.beta, &x, t);
                    systematic[(t, j)] = s;
                    s + rng.sample(eps)
                })
                .collect();
            for (t, v) in latent.iter().enumerate() {
                aligned[(t, j)] = *v;
            }
            if j < j1 {
                donors.push(UnitSeries::same(ids[j].clone(), latent, Some(x.clone())));
            } else {
                let mt = c.m_tilde;
                let obs = (1..=horizon / mt)
                    .map(|cyc| {
                        let end = cyc * mt;
                        (end, latent[end - mt..end].iter().sum::<f64>() / mt as f64)
                    })
                    .collect();
                donors.push(UnitSeries::lower(
                    ids[j].clone(),
                    mt,
                    LowFreqMode::Aggregate,
                    obs,
                    Some(x.clone()),
                ));
            }
        } else {
            let h = j - j1 - j2;
            let m = c.m;
            let n_sub = horizon * m;
            // chronological sub-period index τ = t·m + (m − k), k = 1..m
            let xh = covariate_draws(&mut rng, n_sub, &dgp.phi_h[h]);
            let yh: Vec<f64> = (0..n_sub)
                .map(|tau| dl(&dgp.beta_h, &xh, tau) + rng.sample(eps_h))
                .collect();
            let values = Matrix::from_fn(horizon, m, |t, k| yh[t * m + (m - 1 - k)]);
            let agg = values.mul_vec(&dgp.oracle_lag_weights[h]);
            for (t, v) in agg.iter().enumerate() {
                aligned[(t, j)] = *v;
            }
            donors.push(UnitSeries::higher(ids[j].clone(), values, Some(x.clone())));
        }
        covs.push(x);
    }

    let w = &dgp.oracle_w;
    let treated_x = Matrix::from_fn(horizon, c.q, |t, q| {
        (0..c.j).map(|j| w[j] * covs[j][(t, q)]).sum()
    });
    let untreated: Vec<f64> = (0..horizon)
        .map(|t| crate::linalg::dot(aligned.row(t), w) + rng.sample(eps_u))
        .collect();
    let observed: Vec<f64> = untreated
        .iter()
        .enumerate()
        .map(|(t, v)| if t >= t0 { v + c.effect } else { *v })
        .collect();
    let panel = MixedPanel {
        treated: UnitSeries::same("treated", observed, Some(treated_x)),
        donors,
        t0,
        t1,
        q: c.q,
    };
    let truth = OracleTruth {
        oracle_w: dgp.oracle_w.clone(),
        oracle_lag_weights: dgp.oracle_lag_weights.clone(),
        aligned,
        systematic,
        untreated,
        effect: c.effect,
    };
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shape_examples() {
        for v in oracle_midas_shapes(&OracleShape::ExpAlmon { z1: 0.0, z2: 0.0 }, 3).unwrap() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        for v in oracle_midas_shapes(&OracleShape::Beta { z1: 1.0, z2: 1.0 }, 3).unwrap() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let e = oracle_midas_shapes(&OracleShape::ExpAlmon { z1: -1.0, z2: 0.0 }, 3).unwrap();
        for (a, b) in e.iter().zip([0.66524, 0.24473, 0.09003]) {
            assert_abs_diff_eq!(*a, b, epsilon = 5e-6);
        }
        assert!(oracle_midas_shapes(&OracleShape::Beta { z1: 0.0, z2: 1.0 }, 3).is_err());
        let f = oracle_midas_shapes(&OracleShape::FrontLoaded, 3).unwrap();
        assert_abs_diff_eq!(f[0], 0.5);
        assert!(f.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn balanced_group_mass() {
        let dgp = DgpConfig::default().build().unwrap();
        let (j1, j2, j3) = dgp.config.group_sizes();
        assert_eq!((j1, j2, j3), (6, 7, 7));
        let sums = [
            dgp.oracle_w[..j1].iter().sum::<f64>(),
            dgp.oracle_w[j1..j1 + j2].iter().sum::<f64>(),
            dgp.oracle_w[j1 + j2..].iter().sum::<f64>(),
        ];
        for s in sums {
            assert_abs_diff_eq!(s, 1.0 / 3.0, epsilon = 1e-12);
        }
        for b in &dgp.oracle_lag_weights {
            assert!(b.iter().all(|v| *v >= 0.0));
            assert!(b[0] > b[1] && b[1] > b[2]);
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let dgp = DgpConfig::default().build().unwrap();
        let (a, _) = gen_panel(&dgp, 40, 20, 5).unwrap();
        let (b, _) = gen_panel(&dgp, 40, 20, 5).unwrap();
        assert_eq!(a, b);
        assert!(crate::panel::validate_panel(&a).is_empty());
        let (c, _) = gen_panel(&dgp, 40, 20, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_treated_is_convex_combination() {
        let cfg = DgpConfig {
            sigma: 0.0,
            sigma_h: 0.0,
            sigma_u: 0.0,
            ..DgpConfig::default()
        };
        let dgp = cfg.build().unwrap();
        let (panel, truth) = gen_panel(&dgp, 30, 10, 1).unwrap();
        let y = panel.treated_outcomes();
        for t in 0..40 {
            let comb = crate::linalg::dot(truth.aligned.row(t), &dgp.oracle_w);
            assert_abs_diff_eq!(y[t], comb, epsilon = 1e-12);
        }
    }

    #[test]
    fn treated_noise_scale() {
        let cfg = DgpConfig {
            j: 3,
            ..DgpConfig::default()
        };
        let dgp = cfg.build().unwrap();
        let (_, truth) = gen_panel(&dgp, 5_000, 5_000, 77).unwrap();
        let u: Vec<f64> = (0..10_000)
            .map(|t| truth.untreated[t] - crate::linalg::dot(truth.aligned.row(t), &dgp.oracle_w))
            .collect();
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let sd = (u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / u.len() as f64).sqrt();
        assert_abs_diff_eq!(sd, 0.5, epsilon = 0.02);
    }
}
