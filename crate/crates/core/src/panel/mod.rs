//! Mixed-frequency panel data model and validation.
//!
//! Time is indexed by integer baseline periods `t = 1..=T`. A high-frequency
//! observation carries a sub-period index `k = 1..=m` and stands for time
//! `t - (k-1)/m`, so `k = 1` is the latest reading inside period `t`.
//! Low-frequency donors are observed once per cycle of `m̃` baseline periods,
//! either as an aggregate over the cycle (observed at `t = n·m̃`) or as a
//! point sample taken at a declared offset inside the cycle.

mod io;

pub use io::{load_panel, write_panel, DonorEntry, LoadedPanel, Manifest, UnitEntry};

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::Scalar;

/// How a low-frequency observation relates to the latent baseline path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LowFreqMode {
    /// Weighted aggregate of the `m̃` baseline periods ending at the observation time.
    Aggregate,
    /// Single reading at within-cycle position `offset ∈ 1..=m̃`.
    PointSample { offset: usize },
}

/// Sampling frequency of a unit relative to the treated unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "class")]
pub enum FrequencyClass {
    Same,
    /// One observation every `ratio` baseline periods.
    Lower {
        ratio: usize,
        mode: LowFreqMode,
    },
    /// `ratio` observations per baseline period.
    Higher {
        ratio: usize,
    },
}

impl FrequencyClass {
    pub fn group(&self) -> FreqGroup {
        match self {
            FrequencyClass::Same => FreqGroup::Same,
            FrequencyClass::Lower { .. } => FreqGroup::Lower,
            FrequencyClass::Higher { .. } => FreqGroup::Higher,
        }
    }
}

/// Donor partition label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqGroup {
    Same,
    Lower,
    Higher,
}

/// Outcome storage, dense wherever the frequency class allows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub enum Outcomes<T> {
    /// One value per baseline period, index `t-1`.
    Baseline(Vec<T>),
    /// Sparse `(t, value)` pairs in increasing `t`.
    Sparse(Vec<(usize, T)>),
    /// Row `t-1`, column `k-1` of a `T × m` matrix.
    HighFreq(Matrix<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct UnitSeries<T> {
    pub unit_id: String,
    pub freq: FrequencyClass,
    pub outcomes: Outcomes<T>,
    /// `T × Q` covariates at baseline frequency (row `t-1`, column `q-1`).
    pub covariates: Option<Matrix<T>>,
}

impl<T: Scalar> UnitSeries<T> {
    pub fn same(
        unit_id: impl Into<String>,
        outcomes: Vec<T>,
        covariates: Option<Matrix<T>>,
    ) -> Self {
        Self {
            unit_id: unit_id.into(),
            freq: FrequencyClass::Same,
            outcomes: Outcomes::Baseline(outcomes),
            covariates,
        }
    }

    pub fn lower(
        unit_id: impl Into<String>,
        ratio: usize,
        mode: LowFreqMode,
        observations: Vec<(usize, T)>,
        covariates: Option<Matrix<T>>,
    ) -> Self {
        Self {
            unit_id: unit_id.into(),
            freq: FrequencyClass::Lower { ratio, mode },
            outcomes: Outcomes::Sparse(observations),
            covariates,
        }
    }

    /// `values` is `T × m`, row `t-1` holding sub-periods `k = 1..=m`.
    pub fn higher(
        unit_id: impl Into<String>,
        values: Matrix<T>,
        covariates: Option<Matrix<T>>,
    ) -> Self {
        let ratio = values.cols();
        Self {
            unit_id: unit_id.into(),
            freq: FrequencyClass::Higher { ratio },
            outcomes: Outcomes::HighFreq(values),
            covariates,
        }
    }

    /// Baseline horizon implied by this unit's data, if determinable.
    pub fn horizon(&self) -> Option<usize> {
        match &self.outcomes {
            Outcomes::Baseline(v) => Some(v.len()),
            Outcomes::HighFreq(m) => Some(m.rows()),
            Outcomes::Sparse(_) => self.covariates.as_ref().map(Matrix::rows),
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.as_ref().map_or(0, Matrix::cols)
    }

    /// Baseline-frequency outcomes, available only for `Same` units.
    pub fn baseline(&self) -> Option<&[T]> {
        match &self.outcomes {
            Outcomes::Baseline(v) => Some(v),
            _ => None,
        }
    }

    pub fn high_freq(&self) -> Option<&Matrix<T>> {
        match &self.outcomes {
            Outcomes::HighFreq(m) => Some(m),
            _ => None,
        }
    }

    pub fn sparse(&self) -> Option<&[(usize, T)]> {
        match &self.outcomes {
            Outcomes::Sparse(v) => Some(v),
            _ => None,
        }
    }

    /// Number of stored outcome values (`m·T` for high-frequency units).
    pub fn flat_len(&self) -> usize {
        match &self.outcomes {
            Outcomes::Baseline(v) => v.len(),
            Outcomes::Sparse(v) => v.len(),
            Outcomes::HighFreq(m) => m.rows() * m.cols(),
        }
    }

    /// Copy restricted to baseline periods `1..=horizon`. Low-frequency
    /// observations survive only if their whole aggregation cycle (or the
    /// sample point) falls inside the window.
    pub fn truncated(&self, horizon: usize) -> Self {
        let outcomes = match &self.outcomes {
            Outcomes::Baseline(v) => Outcomes::Baseline(v[..horizon.min(v.len())].to_vec()),
            Outcomes::Sparse(v) => {
                Outcomes::Sparse(v.iter().copied().filter(|&(t, _)| t <= horizon).collect())
            }
            Outcomes::HighFreq(m) => {
                let rows = horizon.min(m.rows());
                Outcomes::HighFreq(Matrix::from_fn(rows, m.cols(), |i, j| m[(i, j)]))
            }
        };
        let covariates = self.covariates.as_ref().map(|c| {
            let rows = horizon.min(c.rows());
            Matrix::from_fn(rows, c.cols(), |i, j| c[(i, j)])
        });
        Self {
            unit_id: self.unit_id.clone(),
            freq: self.freq,
            outcomes,
            covariates,
        }
    }
}

/// A full study: one treated unit at baseline frequency plus a donor pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct MixedPanel<T> {
    pub treated: UnitSeries<T>,
    pub donors: Vec<UnitSeries<T>>,
    /// Last pre-treatment period.
    pub t0: usize,
    /// Number of post-treatment periods.
    pub t1: usize,
    /// Covariate count shared by every unit.
    pub q: usize,
}

/// Indices into `MixedPanel::donors`, split by frequency class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DonorGroups {
    pub same: Vec<usize>,
    pub lower: Vec<usize>,
    pub higher: Vec<usize>,
}

impl DonorGroups {
    pub fn total(&self) -> usize {
        self.same.len() + self.lower.len() + self.higher.len()
    }
}

impl<T: Scalar> MixedPanel<T> {
    /// Baseline horizon `T = T0 + T1`.
    pub fn horizon(&self) -> usize {
        self.t0 + self.t1
    }

    pub fn n_donors(&self) -> usize {
        self.donors.len()
    }

    pub fn groups(&self) -> DonorGroups {
        let mut g = DonorGroups::default();
        for (i, d) in self.donors.iter().enumerate() {
            match d.freq.group() {
                FreqGroup::Same => g.same.push(i),
                FreqGroup::Lower => g.lower.push(i),
                FreqGroup::Higher => g.higher.push(i),
            }
        }
        g
    }

    pub fn donor_index(&self, unit_id: &str) -> Option<usize> {
        self.donors.iter().position(|d| d.unit_id == unit_id)
    }

    /// Treated outcomes at baseline frequency.
    pub fn treated_outcomes(&self) -> &[T] {
        self.treated.baseline().unwrap_or(&[])
    }

    /// Same panel with the horizon cut to `1..=horizon` and a new split
    /// `t0`. Used for placebo-in-time analyses.
    pub fn truncated(&self, horizon: usize, t0: usize) -> Self {
        Self {
            treated: self.treated.truncated(horizon),
            donors: self.donors.iter().map(|d| d.truncated(horizon)).collect(),
            t0,
            t1: horizon.saturating_sub(t0),
            q: self.q,
        }
    }
}

/// One violated panel invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub unit: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn panel(message: impl Into<String>) -> Self {
        Self {
            unit: None,
            message: message.into(),
        }
    }

    fn unit(unit: &str, message: impl Into<String>) -> Self {
        Self {
            unit: Some(unit.to_string()),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.unit {
            Some(u) => write!(f, "unit `{u}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every panel invariant and returns one diagnostic per violation.
/// An empty list means the panel is valid.
pub fn validate_panel<T: Scalar>(panel: &MixedPanel<T>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let horizon = panel.horizon();

    if panel.treated.freq != FrequencyClass::Same {
        out.push(Diagnostic::unit(
            &panel.treated.unit_id,
            "treated must be baseline frequency",
        ));
    }
    if panel.t0 == 0 {
        out.push(Diagnostic::panel(
            "pre-treatment period empty (T0 must be positive)",
        ));
    }
    if panel.t1 == 0 {
        out.push(Diagnostic::panel("post-treatment period empty"));
    }
    if panel.donors.is_empty() {
        out.push(Diagnostic::panel("donor pool is empty"));
    }

    let groups = panel.groups();
    if panel.q == 0 && !groups.lower.is_empty() {
        out.push(Diagnostic::panel(
            "lower-frequency donors require covariates (Q = 0)",
        ));
    }

    let mut ids = std::collections::HashSet::new();
    ids.insert(panel.treated.unit_id.as_str());
    for d in &panel.donors {
        if !ids.insert(d.unit_id.as_str()) {
            out.push(Diagnostic::unit(&d.unit_id, "duplicate unit id"));
        }
    }

    for unit in std::iter::once(&panel.treated).chain(&panel.donors) {
        validate_unit(unit, horizon, panel.q, &mut out);
    }
    out
}

fn validate_unit<T: Scalar>(
    unit: &UnitSeries<T>,
    horizon: usize,
    q: usize,
    out: &mut Vec<Diagnostic>,
) {
    let id = unit.unit_id.as_str();
    match unit.freq {
        FrequencyClass::Same => {
            if !matches!(unit.outcomes, Outcomes::Baseline(_)) {
                out.push(Diagnostic::unit(
                    id,
                    "baseline-frequency unit must store one value per period",
                ));
            }
        }
        FrequencyClass::Lower { ratio, mode } => {
            if ratio < 2 {
                out.push(Diagnostic::unit(
                    id,
                    format!("lower-frequency ratio must be >= 2, got {ratio}"),
                ));
            }
            if let LowFreqMode::PointSample { offset } = mode {
                if offset == 0 || offset > ratio {
                    out.push(Diagnostic::unit(
                        id,
                        format!("point-sample offset {offset} outside 1..={ratio}"),
                    ));
                }
            }
            match &unit.outcomes {
                Outcomes::Sparse(obs) if ratio >= 2 => {
                    let expected = expected_low_freq_times(ratio, mode, horizon);
                    let got: Vec<usize> = obs.iter().map(|&(t, _)| t).collect();
                    if got != expected {
                        let missing: Vec<usize> = expected
                            .iter()
                            .copied()
                            .filter(|t| !got.contains(t))
                            .collect();
                        let extra: Vec<usize> = got
                            .iter()
                            .copied()
                            .filter(|t| !expected.contains(t))
                            .collect();
                        out.push(Diagnostic::unit(
                            id,
                            format!(
                                "low-frequency observation times inconsistent with ratio {ratio} and horizon {horizon} (missing t={missing:?}, unexpected t={extra:?})"
                            ),
                        ));
                    }
                }
                Outcomes::Sparse(_) => {}
                _ => out.push(Diagnostic::unit(
                    id,
                    "lower-frequency unit must store sparse observations",
                )),
            }
        }
        FrequencyClass::Higher { ratio } => {
            if ratio < 2 {
                out.push(Diagnostic::unit(
                    id,
                    format!("higher-frequency ratio must be >= 2, got {ratio}"),
                ));
            }
            match &unit.outcomes {
                Outcomes::HighFreq(m) => {
                    if m.cols() != ratio {
                        out.push(Diagnostic::unit(
                            id,
                            format!(
                                "expected {ratio} sub-period values per period, found {}",
                                m.cols()
                            ),
                        ));
                    }
                }
                _ => out.push(Diagnostic::unit(
                    id,
                    "higher-frequency unit must store an m-per-period block",
                )),
            }
        }
    }

    match unit.horizon() {
        Some(h) if h != horizon => out.push(Diagnostic::unit(
            id,
            format!("horizon {h} differs from T0 + T1 = {horizon}"),
        )),
        None => out.push(Diagnostic::unit(
            id,
            "horizon undeterminable (no covariates)",
        )),
        _ => {}
    }

    match &unit.covariates {
        Some(c) => {
            if c.cols() != q {
                out.push(Diagnostic::unit(
                    id,
                    format!("has {} covariates, panel declares Q = {q}", c.cols()),
                ));
            }
            if c.rows() != horizon {
                out.push(Diagnostic::unit(
                    id,
                    format!("covariates cover {} periods, expected {horizon}", c.rows()),
                ));
            }
            if let Some(pos) = c.as_slice().iter().position(|v| !v.is_finite()) {
                out.push(Diagnostic::unit(
                    id,
                    format!(
                        "missing covariate value at t={}, q={}",
                        pos / c.cols().max(1) + 1,
                        pos % c.cols().max(1) + 1
                    ),
                ));
            }
        }
        None if q > 0 => out.push(Diagnostic::unit(
            id,
            format!("missing covariates (Q = {q})"),
        )),
        None => {}
    }

    let bad = match &unit.outcomes {
        Outcomes::Baseline(v) => v
            .iter()
            .position(|x| !x.is_finite())
            .map(|i| format!("t={}", i + 1)),
        Outcomes::Sparse(v) => v
            .iter()
            .find(|(_, x)| !x.is_finite())
            .map(|(t, _)| format!("t={t}")),
        Outcomes::HighFreq(m) => m
            .as_slice()
            .iter()
            .position(|x| !x.is_finite())
            .map(|i| format!("t={}, k={}", i / m.cols() + 1, i % m.cols() + 1)),
    };
    if let Some(at) = bad {
        out.push(Diagnostic::unit(
            id,
            format!("missing outcome value at {at}"),
        ));
    }
}

/// Observation times a low-frequency unit must report over `1..=horizon`.
pub fn expected_low_freq_times(ratio: usize, mode: LowFreqMode, horizon: usize) -> Vec<usize> {
    match mode {
        LowFreqMode::Aggregate => (1..=horizon / ratio).map(|n| n * ratio).collect(),
        LowFreqMode::PointSample { offset } => (0..)
            .map(|n| n * ratio + offset)
            .take_while(|&t| t <= horizon)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covs(t: usize, q: usize) -> Option<Matrix<f64>> {
        Some(Matrix::from_fn(t, q, |i, j| (i * 3 + j) as f64 * 0.1))
    }

    fn toy_panel() -> MixedPanel<f64> {
        let t = 12;
        MixedPanel {
            treated: UnitSeries::same("treated", (0..t).map(|i| i as f64).collect(), covs(t, 1)),
            donors: vec![
                UnitSeries::same("a", (0..t).map(|i| 2.0 * i as f64).collect(), covs(t, 1)),
                UnitSeries::lower(
                    "b",
                    4,
                    LowFreqMode::Aggregate,
                    vec![(4, 1.0), (8, 2.0), (12, 3.0)],
                    covs(t, 1),
                ),
                UnitSeries::higher(
                    "c",
                    Matrix::from_fn(t, 3, |i, k| (i + k) as f64),
                    covs(t, 1),
                ),
            ],
            t0: 8,
            t1: 4,
            q: 1,
        }
    }

    #[test]
    fn well_formed_panel_has_no_diagnostics() {
        let p = toy_panel();
        assert_eq!(validate_panel(&p), vec![]);
        let g = p.groups();
        assert_eq!((g.same.len(), g.lower.len(), g.higher.len()), (1, 1, 1));
        assert_eq!(g.total(), p.n_donors());
        assert_eq!(p.donors[2].flat_len(), 3 * p.horizon());
    }

    #[test]
    fn treated_must_be_baseline() {
        let mut p = toy_panel();
        p.treated.freq = FrequencyClass::Lower {
            ratio: 4,
            mode: LowFreqMode::Aggregate,
        };
        let d = validate_panel(&p);
        assert!(
            d.iter()
                .any(|d| d.message == "treated must be baseline frequency"),
            "{d:?}"
        );
    }

    #[test]
    fn empty_post_period_is_flagged() {
        let mut p = toy_panel();
        p.t0 = 12;
        p.t1 = 0;
        let d = validate_panel(&p);
        assert!(
            d.iter().any(|d| d.message == "post-treatment period empty"),
            "{d:?}"
        );
    }

    #[test]
    fn lower_frequency_needs_covariates() {
        let mut p = toy_panel();
        p.q = 0;
        for u in std::iter::once(&mut p.treated).chain(p.donors.iter_mut()) {
            u.covariates = None;
        }
        let d = validate_panel(&p);
        assert!(
            d.iter().any(|d| d.message.contains("require covariates")),
            "{d:?}"
        );
    }

    #[test]
    fn point_sample_times() {
        assert_eq!(
            expected_low_freq_times(4, LowFreqMode::PointSample { offset: 2 }, 13),
            vec![2, 6, 10]
        );
        assert_eq!(
            expected_low_freq_times(4, LowFreqMode::Aggregate, 13),
            vec![4, 8, 12]
        );
    }

    #[test]
    fn truncation_drops_incomplete_cycles() {
        let p = toy_panel().truncated(8, 5);
        assert_eq!(p.horizon(), 8);
        assert_eq!(p.donors[1].sparse().unwrap(), &[(4, 1.0), (8, 2.0)]);
        assert!(validate_panel(&p).is_empty());
    }
}
