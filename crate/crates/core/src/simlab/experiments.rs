use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{effects, fit, EstimationConfig, Variant};
use crate::freq_align::LagPolyBasis;
use crate::inference::{block_bootstrap_ci, BlockRule, BootstrapConfig};
use crate::linalg::Matrix;
use crate::optim::{solve_joint, BlockKind, SimplexQP, VarBlock};
use crate::panel::FrequencyClass;

use super::dgp::{gen_panel, Dgp, DgpConfig};

const TAG_RISK_EVAL: u64 = 1;
const TAG_RISK_TRAIN: u64 = 2;
const TAG_COVERAGE: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of integers into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C909, |acc, p| {
        splitmix64(acc ^ splitmix64(*p))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub t0_grid: Vec<usize>,
    pub t1: usize,
    /// Training panels per grid point.
    pub s: usize,
    /// Evaluation draws forming the common risk surface.
    pub m_draws: usize,
    /// Post-treatment periods of each training panel (only pre-treatment data is used).
    pub train_t1: usize,
    pub variants: Vec<Variant>,
    pub estimation: EstimationConfig,
    pub seed: u64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            t0_grid: vec![20, 80, 320, 1280],
            t1: 100,
            s: 500,
            m_draws: 1000,
            train_t1: 1,
            variants: Variant::ALL.to_vec(),
            estimation: EstimationConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    /// `(T0, T1)` cells.
    pub cells: Vec<(usize, usize)>,
    pub reps: usize,
    pub n_boot: usize,
    pub block_rule: BlockRule,
    pub levels: Vec<f64>,
    pub estimation: EstimationConfig,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            cells: vec![(40, 20)],
            reps: 1000,
            n_boot: 1000,
            block_rule: BlockRule::FloorPowWithMin { a: 0.5, min_m: 10 },
            levels: vec![0.90, 0.95, 0.99],
            estimation: EstimationConfig::default(),
            seed: 0,
        }
    }
}

/// One output row: a grid cell, optionally split by variant or level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub t0: usize,
    pub t1: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_ratio: Option<f64>,
    /// Standard error of the mean ratio across training panels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_ratio_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inf_risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_length: Option<f64>,
    /// Replications that completed.
    pub n: usize,
    /// Replications that failed.
    pub failed: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub errors: Vec<String>,
}

impl Cell {
    fn new(t0: usize, t1: usize) -> Self {
        Self {
            t0,
            t1,
            variant: None,
            level: None,
            risk_ratio: None,
            risk_ratio_se: None,
            risk: None,
            inf_risk: None,
            coverage: None,
            mean_length: None,
            n: 0,
            failed: 0,
            errors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RiskRatio,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub dgp: DgpConfig,
    pub replications: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_draws: Option<usize>,
    pub seed: u64,
    pub cells: Vec<Cell>,
    /// Wall-clock seconds; excluded from serialized output so that files are
    /// reproducible.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl ExperimentResult {
    pub fn cell(
        &self,
        t0: usize,
        t1: usize,
        variant: Option<Variant>,
        level: Option<f64>,
    ) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.t0 == t0
                && c.t1 == t1
                && c.variant == variant
                && level.is_none_or(|l| c.level.is_some_and(|x| (x - l).abs() < 1e-12))
        })
    }

    /// Coverage table: one row per `(T1, T0)` with coverage and mean length
    /// columns per level; risk table: `T0,variant,ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.kind {
            ExperimentKind::RiskRatio => {
                out.push_str("T0,variant,ratio\n");
                for c in &self.cells {
                    let ratio = c
                        .risk_ratio
                        .map(|r| r.to_string())
                        .unwrap_or_else(|| "NA".into());
                    let v = c.variant.map(|v| v.as_str()).unwrap_or("");
                    let _ = writeln!(out, "{},{},{}", c.t0, v, ratio);
                }
            }
            ExperimentKind::Coverage => {
                let mut levels: Vec<f64> = self.cells.iter().filter_map(|c| c.level).collect();
                levels.sort_by(|a, b| a.total_cmp(b));
                levels.dedup();
                let mut grid: Vec<(usize, usize)> =
                    self.cells.iter().map(|c| (c.t1, c.t0)).collect();
                grid.sort_unstable();
                grid.dedup();
                out.push_str("T1,T0");
                for l in &levels {
                    let pct = (l * 100.0).round();
                    let _ = write!(out, ",coverage_{pct},length_{pct}");
                }
                out.push('\n');
                for (t1, t0) in grid {
                    let _ = write!(out, "{t1},{t0}");
                    for l in &levels {
                        match self.cell(t0, t1, None, Some(*l)) {
                            Some(Cell {
                                coverage: Some(cv),
                                mean_length: Some(len),
                                ..
                            }) => {
                                let _ = write!(out, ",{cv:.3},{len:.4}");
                            }
                            _ => out.push_str(",NA,NA"),
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

fn blocks_for(dgp: &Dgp, basis: &LagPolyBasis) -> (Vec<VarBlock<f64>>, usize) {
    let (j1, j2, _) = dgp.config.group_sizes();
    let m = dgp.config.m;
    let mut blocks = Vec::with_capacity(dgp.config.j);
    let mut offset = 0;
    for j in 0..dgp.config.j {
        let kind = if j < j1 + j2 {
            BlockKind::Fixed
        } else {
            BlockKind::Midas {
                lag_matrix: basis.lag_matrix(m),
                lag_sums: basis.lag_sums(m),
            }
        };
        let b = VarBlock {
            donor: j,
            offset,
            kind,
        };
        offset += b.len();
        blocks.push(b);
    }
    (blocks, offset)
}

/// Pooled post-treatment moments over `M` draws: `G = Σ f f'`, `h = Σ f y`,
/// `c = Σ y²` with lifted features `f`.
fn risk_surface(
    dgp: &Dgp,
    t1: usize,
    m_draws: usize,
    seed: u64,
    t0: usize,
    basis: &LagPolyBasis,
) -> Result<(Matrix<f64>, Vec<f64>, f64, usize)> {
    let (j1, j2, _) = dgp.config.group_sizes();
    let m = dgp.config.m;
    let (_, d) = blocks_for(dgp, basis);
    let lag = basis.lag_matrix::<f64>(m);
    let parts: Vec<(Matrix<f64>, Vec<f64>, f64)> = (0..m_draws)
        .into_par_iter()
        .map(|r| -> Result<(Matrix<f64>, Vec<f64>, f64)> {
            // one leading period supplies the first covariate lag
            let (panel, truth) = gen_panel(
                dgp,
                1,
                t1,
                derive_seed(&[seed, TAG_RISK_EVAL, t0 as u64, r as u64]),
            )?;
            let mut g = Matrix::zeros(d, d);
            let mut h = vec![0.0; d];
            let mut c = 0.0;
            let mut f = vec![0.0; d];
            for t in 1..=t1 {
                let mut pos = 0;
                for (j, donor) in panel.donors.iter().enumerate() {
                    if j < j1 {
                        f[pos] = truth.aligned[(t, j)];
                        pos += 1;
                    } else if j < j1 + j2 {
                        f[pos] = truth.systematic[(t, j)];
                        pos += 1;
                    } else {
                        let hf = donor.high_freq().expect("high-frequency donor");
                        for l in 0..lag.cols() {
                            f[pos + l] = (0..m).map(|k| hf[(t, k)] * lag[(k, l)]).sum();
                        }
                        pos += lag.cols();
                    }
                }
                let y = truth.untreated[t];
                for a in 0..d {
                    h[a] += f[a] * y;
                    for b in 0..d {
                        g[(a, b)] += f[a] * f[b];
                    }
                }
                c += y * y;
            }
            Ok((g, h, c))
        })
        .collect::<Result<_>>()?;
    let mut g = Matrix::zeros(d, d);
    let mut h = vec![0.0; d];
    let mut c = 0.0;
    for (pg, ph, pc) in parts {
        for a in 0..d {
            h[a] += ph[a];
            for b in 0..d {
                g[(a, b)] += pg[(a, b)];
            }
        }
        c += pc;
    }
    Ok((g, h, c, m_draws * t1))
}

/// Mean ratio of each variant's pooled post-treatment risk to the infimum
/// over the lifted feasible class, per `T0`.
pub fn risk_ratio_experiment(dgp: &DgpConfig, config: &RiskConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    if config.t0_grid.is_empty() || config.variants.is_empty() {
        return Err(Error::config("t0_grid", "grids must be nonempty"));
    }
    if config.s == 0 || config.m_draws == 0 || config.t1 == 0 {
        return Err(Error::config("reps", "S, M and T1 must be positive"));
    }
    config.estimation.validate()?;
    let dgp = dgp.build()?;
    let basis = LagPolyBasis::new(config.estimation.basis_degree)?;
    let nonneg = config.estimation.nonneg_midas;
    let mut cells = Vec::new();
    for &t0 in &config.t0_grid {
        let (g, h, c, n) = risk_surface(&dgp, config.t1, config.m_draws, config.seed, t0, &basis)?;
        let (blocks, _) = blocks_for(&dgp, &basis);
        let qp = SimplexQP::from_moments(&g, &h, c, 1.0 / n as f64, blocks.clone(), nonneg);
        let inf = solve_joint(&qp, config.estimation.kkt_tol, config.estimation.max_iter);
        let inf_risk = qp.quadratic_objective(&inf.x);
        log::info!("T0={t0}: infimum risk {inf_risk:.6} ({:?})", inf.status);

        let outcomes: Vec<Vec<Result<f64>>> = (0..config.s)
            .into_par_iter()
            .map(|s| {
                let seed = derive_seed(&[config.seed, TAG_RISK_TRAIN, t0 as u64, s as u64]);
                let panel = match gen_panel(&dgp, t0, config.train_t1, seed) {
                    Ok((p, _)) => p,
                    Err(e) => {
                        return config
                            .variants
                            .iter()
                            .map(|_| Err(Error::domain(e.to_string())))
                            .collect()
                    }
                };
                config
                    .variants
                    .iter()
                    .map(|&variant| {
                        let est = EstimationConfig {
                            variant,
                            drop_short_lower: true,
                            ..config.estimation.clone()
                        };
                        let f = fit(&panel, &est)?;
                        let mut x = vec![0.0; qp.dim()];
                        for b in &blocks {
                            let donor = &panel.donors[b.donor];
                            let w = f.weights[&donor.unit_id];
                            match donor.freq {
                                FrequencyClass::Higher { .. } => {
                                    let zeta = &f.midas[&donor.unit_id].zeta;
                                    for (l, z) in zeta.iter().enumerate() {
                                        x[b.offset + l] = w * z;
                                    }
                                }
                                _ => x[b.offset] = w,
                            }
                        }
                        Ok(qp.quadratic_objective(&x))
                    })
                    .collect()
            })
            .collect();

        for (vi, &variant) in config.variants.iter().enumerate() {
            let mut cell = Cell::new(t0, config.t1);
            cell.variant = Some(variant);
            cell.inf_risk = Some(inf_risk);
            let mut ratios = Vec::new();
            let mut risks = Vec::new();
            for o in &outcomes {
                match &o[vi] {
                    Ok(r) => {
                        risks.push(*r);
                        ratios.push(*r / inf_risk);
                    }
                    Err(e) => {
                        cell.failed += 1;
                        if cell.errors.len() < 5 {
                            cell.errors.push(e.to_string());
                        }
                    }
                }
            }
            cell.n = ratios.len();
            if !ratios.is_empty() {
                let k = ratios.len() as f64;
                let mean = ratios.iter().sum::<f64>() / k;
                let var =
                    ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
                cell.risk_ratio = Some(mean);
                cell.risk_ratio_se = Some((var / k).sqrt());
                cell.risk = Some(risks.iter().sum::<f64>() / k);
            }
            cells.push(cell);
        }
    }
    Ok(ExperimentResult {
        kind: ExperimentKind::RiskRatio,
        dgp: dgp.config.clone(),
        replications: config.s,
        n_boot: None,
        m_draws: Some(config.m_draws),
        seed: config.seed,
        cells,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Empirical coverage of the true ATE and mean interval length per cell and
/// level. All levels are read off one bootstrap sample per replicate.
pub fn coverage_experiment(dgp: &DgpConfig, config: &CoverageConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    if config.cells.is_empty() || config.levels.is_empty() {
        return Err(Error::config("cells", "grids must be nonempty"));
    }
    if config.reps == 0 {
        return Err(Error::config("reps", "must be positive"));
    }
    config.estimation.validate()?;
    let boot_level = config.levels[0];
    for &l in &config.levels {
        BootstrapConfig {
            n_boot: config.n_boot,
            block_rule: config.block_rule,
            seed: 0,
            level: l,
        }
        .validate()?;
    }
    for &(t0, t1) in &config.cells {
        config.block_rule.block_size(t0)?;
        if t1 < 2 {
            return Err(Error::config("T1", "coverage cells need T1 >= 2"));
        }
    }
    let dgp = dgp.build()?;
    let truth_ate = dgp.config.effect;
    let mut cells = Vec::new();
    for &(t0, t1) in &config.cells {
        let reps: Vec<Result<Vec<(f64, f64)>>> = (0..config.reps)
            .into_par_iter()
            .map(|r| {
                let seed =
                    derive_seed(&[config.seed, TAG_COVERAGE, t0 as u64, t1 as u64, r as u64]);
                let (panel, _) = gen_panel(&dgp, t0, t1, seed)?;
                let f = fit(&panel, &config.estimation)?;
                let e = effects(&f, &panel)?;
                let boot = BootstrapConfig {
                    n_boot: config.n_boot,
                    block_rule: config.block_rule,
                    seed: splitmix64(seed),
                    level: boot_level,
                };
                let ci = block_bootstrap_ci(&panel, &f, &e, &boot)?;
                config.levels.iter().map(|&l| ci.at_level(l, t1)).collect()
            })
            .collect();
        for (li, &level) in config.levels.iter().enumerate() {
            let mut cell = Cell::new(t0, t1);
            cell.level = Some(level);
            let (mut hits, mut len) = (0usize, 0.0);
            for r in &reps {
                match r {
                    Ok(iv) => {
                        let (lo, hi) = iv[li];
                        cell.n += 1;
                        if lo <= truth_ate && truth_ate <= hi {
                            hits += 1;
                        }
                        len += hi - lo;
                    }
                    Err(e) => {
                        cell.failed += 1;
                        if cell.errors.len() < 5 {
                            cell.errors.push(e.to_string());
                        }
                    }
                }
            }
            if cell.n > 0 {
                cell.coverage = Some(hits as f64 / cell.n as f64);
                cell.mean_length = Some(len / cell.n as f64);
            }
            cells.push(cell);
        }
    }
    Ok(ExperimentResult {
        kind: ExperimentKind::Coverage,
        dgp: dgp.config.clone(),
        replications: config.reps,
        n_boot: Some(config.n_boot),
        m_draws: None,
        seed: config.seed,
        cells,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_part() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_ne!(derive_seed(&[0]), derive_seed(&[0, 0]));
        assert_eq!(derive_seed(&[5, 6, 7]), derive_seed(&[5, 6, 7]));
    }

    #[test]
    fn small_risk_run_ratios_at_least_one() {
        let dgp = DgpConfig {
            j: 6,
            ..DgpConfig::default()
        };
        let cfg = RiskConfig {
            t0_grid: vec![20],
            t1: 10,
            s: 4,
            m_draws: 20,
            ..RiskConfig::default()
        };
        let res = risk_ratio_experiment(&dgp, &cfg).unwrap();
        assert_eq!(res.cells.len(), 3);
        for c in &res.cells {
            assert_eq!(c.failed, 0, "{:?}", c.errors);
            assert!(c.risk_ratio.unwrap() >= 1.0 - 1e-6, "{c:?}");
        }
        assert!(res.to_csv().starts_with("T0,variant,ratio\n"));
    }

    #[test]
    fn small_coverage_run_is_nested_and_deterministic() {
        let dgp = DgpConfig {
            j: 6,
            ..DgpConfig::default()
        };
        let cfg = CoverageConfig {
            cells: vec![(40, 5)],
            reps: 6,
            n_boot: 50,
            ..CoverageConfig::default()
        };
        let a = coverage_experiment(&dgp, &cfg).unwrap();
        let b = coverage_experiment(&dgp, &cfg).unwrap();
        assert_eq!(a.cells, b.cells);
        let cov: Vec<f64> = a.cells.iter().map(|c| c.coverage.unwrap()).collect();
        let len: Vec<f64> = a.cells.iter().map(|c| c.mean_length.unwrap()).collect();
        assert!(cov[0] <= cov[1] && cov[1] <= cov[2]);
        assert!(len[0] <= len[1] && len[1] <= len[2]);
        let csv = a.to_csv();
        assert!(csv.starts_with("T1,T0,coverage_90,length_90,coverage_95"));
    }
}
