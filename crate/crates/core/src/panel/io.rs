//! Panel ingestion and export.
//!
//! Each unit is stored as one outcome CSV (`t,k,value`, with `k` empty for
//! baseline and low-frequency units) and an optional covariate CSV
//! (`t,q,value`). A TOML manifest ties the files together, declares each
//! donor's frequency class and carries the estimation settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_panel, FrequencyClass, LowFreqMode, MixedPanel, Outcomes, UnitSeries};
use crate::error::{Error, Result};
use crate::estimator::EstimationConfig;
use crate::linalg::Matrix;
use crate::Scalar;

/// Declarative description of a study. File paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Last pre-treatment baseline period.
    pub t0: usize,
    /// Number of covariates carried by every unit.
    #[serde(default)]
    pub n_covariates: usize,
    #[serde(default)]
    pub estimation: EstimationConfig,
    pub treated: UnitEntry,
    pub donors: Vec<DonorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEntry {
    pub id: String,
    pub outcomes: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DonorEntry {
    pub id: String,
    /// `same`, `lower` or `higher`.
    pub freq: String,
    /// Frequency ratio (`m̃` for lower, `m` for higher units).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<usize>,
    /// `aggregate` or `point_sample`; lower-frequency units only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Within-cycle sample position for `point_sample`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    pub outcomes: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
}

impl Manifest {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "manifest".to_string());
            Error::config(key, e.to_string())
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes to TOML")
    }
}

impl DonorEntry {
    fn frequency_class(&self, idx: usize) -> Result<FrequencyClass> {
        let key = |field: &str| format!("donors[{idx}].{field}");
        let ratio = || {
            self.ratio
                .ok_or_else(|| Error::config(key("ratio"), "required for lower/higher units"))
        };
        match self.freq.as_str() {
            "same" => Ok(FrequencyClass::Same),
            "higher" => Ok(FrequencyClass::Higher { ratio: ratio()? }),
            "lower" => {
                let ratio = ratio()?;
                let mode = match self.mode.as_deref() {
                    None => {
                        return Err(Error::config(
                            key("mode"),
                            "lower-frequency units must declare `aggregate` or `point_sample`",
                        ))
                    }
                    Some("aggregate") => LowFreqMode::Aggregate,
                    Some("point_sample") => LowFreqMode::PointSample {
                        offset: self.offset.ok_or_else(|| {
                            Error::config(key("offset"), "required for point_sample")
                        })?,
                    },
                    Some(other) => {
                        return Err(Error::config(
                            key("mode"),
                            format!("unknown mode `{other}`"),
                        ))
                    }
                };
                Ok(FrequencyClass::Lower { ratio, mode })
            }
            other => Err(Error::config(
                key("freq"),
                format!("unknown frequency tag `{other}` (expected same, lower or higher)"),
            )),
        }
    }
}

/// A validated panel together with the manifest that described it.
#[derive(Debug, Clone)]
pub struct LoadedPanel<T> {
    pub panel: MixedPanel<T>,
    pub manifest: Manifest,
}

/// Reads a manifest and every file it references, returning a validated panel.
pub fn load_panel<T: Scalar>(manifest_path: &Path) -> Result<LoadedPanel<T>> {
    let manifest = Manifest::from_path(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let panel = assemble_panel(&manifest, base)?;
    Ok(LoadedPanel { panel, manifest })
}

fn assemble_panel<T: Scalar>(manifest: &Manifest, base: &Path) -> Result<MixedPanel<T>> {
    if manifest.donors.is_empty() {
        return Err(Error::config("donors", "donor list is empty"));
    }
    let q = manifest.n_covariates;

    let treated_rows = read_outcome_rows::<T>(&base.join(&manifest.treated.outcomes))?;
    let treated = build_unit(
        &manifest.treated.id,
        FrequencyClass::Same,
        treated_rows,
        read_covariates(&manifest.treated.covariates, base, q, &manifest.treated.id)?,
    )?;
    let horizon = treated.horizon().unwrap_or(0);

    let mut donors = Vec::with_capacity(manifest.donors.len());
    for (idx, entry) in manifest.donors.iter().enumerate() {
        let freq = entry.frequency_class(idx)?;
        let rows = read_outcome_rows::<T>(&base.join(&entry.outcomes))?;
        let cov = read_covariates(&entry.covariates, base, q, &entry.id)?;
        donors.push(build_unit(&entry.id, freq, rows, cov)?);
    }

    let mismatched: Vec<String> = donors
        .iter()
        .filter_map(|d| match d.horizon() {
            Some(h) if h == horizon => None,
            Some(h) => Some(format!(
                "unit `{}` spans {h} periods, treated spans {horizon}",
                d.unit_id
            )),
            None => Some(format!("unit `{}` has undeterminable horizon", d.unit_id)),
        })
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Validation(mismatched));
    }
    if manifest.t0 >= horizon {
        return Err(Error::config(
            "t0",
            format!(
                "t0 = {} leaves no post-treatment periods (horizon {horizon})",
                manifest.t0
            ),
        ));
    }

    let panel = MixedPanel {
        treated,
        donors,
        t0: manifest.t0,
        t1: horizon - manifest.t0,
        q,
    };
    let diags = validate_panel(&panel);
    if diags.is_empty() {
        Ok(panel)
    } else {
        Err(Error::Validation(
            diags.iter().map(ToString::to_string).collect(),
        ))
    }
}

/// Raw outcome record: `(t, k, value)` with `value == None` for a blank cell.
struct OutcomeRow<T> {
    line: usize,
    t: usize,
    k: Option<usize>,
    value: Option<T>,
}

fn csv_reader(path: &Path, expected: [&str; 3]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(rdr)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_field<V: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<V> {
    raw.parse::<V>()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from `{raw}`")))
}

fn read_outcome_rows<T: Scalar>(path: &Path) -> Result<Vec<OutcomeRow<T>>> {
    let mut rdr = csv_reader(path, ["t", "k", "value"])?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let t: usize = parse_field(path, line, "t", &rec[0])?;
        if t == 0 {
            return Err(parse_err(path, line, "t must start at 1"));
        }
        let k = if rec[1].is_empty() {
            None
        } else {
            Some(parse_field::<usize>(path, line, "k", &rec[1])?)
        };
        let value = if rec[2].is_empty() {
            None
        } else {
            Some(parse_field::<T>(path, line, "value", &rec[2])?)
        };
        rows.push(OutcomeRow { line, t, k, value });
    }
    Ok(rows)
}

fn read_covariates<T: Scalar>(
    entry: &Option<PathBuf>,
    base: &Path,
    q: usize,
    unit: &str,
) -> Result<Option<Matrix<T>>> {
    let Some(rel) = entry else {
        return if q > 0 {
            Err(Error::Validation(vec![format!(
                "unit `{unit}`: missing covariate file (Q = {q})"
            )]))
        } else {
            Ok(None)
        };
    };
    let path = base.join(rel);
    let mut rdr = csv_reader(&path, ["t", "q", "value"])?;
    let mut cells: BTreeMap<(usize, usize), T> = BTreeMap::new();
    let mut horizon = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(&path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let t: usize = parse_field(&path, line, "t", &rec[0])?;
        let qi: usize = parse_field(&path, line, "q", &rec[1])?;
        if t == 0 || qi == 0 || qi > q {
            return Err(parse_err(
                &path,
                line,
                format!("index (t={t}, q={qi}) out of range (Q = {q})"),
            ));
        }
        if rec[2].is_empty() {
            return Err(Error::Validation(vec![format!(
                "unit `{unit}`: missing covariate value at t={t}, q={qi}"
            )]));
        }
        let v: T = parse_field(&path, line, "value", &rec[2])?;
        if cells.insert((t, qi), v).is_some() {
            return Err(parse_err(
                &path,
                line,
                format!("duplicate covariate cell (t={t}, q={qi})"),
            ));
        }
        horizon = horizon.max(t);
    }
    let mut missing = Vec::new();
    let m = Matrix::from_fn(horizon, q, |i, j| match cells.get(&(i + 1, j + 1)) {
        Some(&v) => v,
        None => {
            missing.push(format!("t={}, q={}", i + 1, j + 1));
            T::nan()
        }
    });
    if !missing.is_empty() {
        return Err(Error::Validation(vec![format!(
            "unit `{unit}`: missing covariate values at {}",
            missing.join("; ")
        )]));
    }
    Ok(Some(m))
}

fn build_unit<T: Scalar>(
    id: &str,
    freq: FrequencyClass,
    rows: Vec<OutcomeRow<T>>,
    covariates: Option<Matrix<T>>,
) -> Result<UnitSeries<T>> {
    let fail = |msg: String| Error::Validation(vec![format!("unit `{id}`: {msg}")]);
    for r in &rows {
        if r.value.is_none() {
            return Err(fail(format!(
                "missing value at t={} (line {})",
                r.t, r.line
            )));
        }
    }
    match freq {
        FrequencyClass::Same => {
            let mut by_t: BTreeMap<usize, T> = BTreeMap::new();
            for r in &rows {
                if r.k.is_some() {
                    return Err(fail(format!(
                        "baseline-frequency row at line {} carries k",
                        r.line
                    )));
                }
                if by_t.insert(r.t, r.value.unwrap()).is_some() {
                    return Err(fail(format!("duplicate observation at t={}", r.t)));
                }
            }
            let horizon = by_t.keys().next_back().copied().unwrap_or(0);
            if let Some(gap) = (1..=horizon).find(|t| !by_t.contains_key(t)) {
                return Err(fail(format!("missing observation at t={gap}")));
            }
            Ok(UnitSeries {
                unit_id: id.to_string(),
                freq,
                outcomes: Outcomes::Baseline(by_t.into_values().collect()),
                covariates,
            })
        }
        FrequencyClass::Lower { ratio, mode } => {
            let mut by_t: BTreeMap<usize, T> = BTreeMap::new();
            for r in &rows {
                if r.k.is_some() {
                    return Err(fail(format!(
                        "low-frequency row at line {} carries k",
                        r.line
                    )));
                }
                if by_t.insert(r.t, r.value.unwrap()).is_some() {
                    return Err(fail(format!("duplicate observation at t={}", r.t)));
                }
            }
            let horizon = covariates.as_ref().map_or(0, Matrix::rows);
            if ratio >= 2 {
                let expected = super::expected_low_freq_times(ratio, mode, horizon);
                if let Some(t) = expected.iter().find(|t| !by_t.contains_key(t)) {
                    return Err(fail(format!("missing low-frequency observation at t={t}")));
                }
                if let Some(t) = by_t.keys().find(|t| !expected.contains(t)) {
                    return Err(fail(format!(
                        "observation at t={t} is not a declared sampling time for ratio {ratio}"
                    )));
                }
            }
            Ok(UnitSeries {
                unit_id: id.to_string(),
                freq,
                outcomes: Outcomes::Sparse(by_t.into_iter().collect()),
                covariates,
            })
        }
        FrequencyClass::Higher { ratio } => {
            let mut cells: BTreeMap<(usize, usize), T> = BTreeMap::new();
            for r in &rows {
                let k = r.k.ok_or_else(|| {
                    fail(format!("high-frequency row at line {} lacks k", r.line))
                })?;
                if k == 0 || k > ratio {
                    return Err(fail(format!(
                        "k={k} at line {} outside 1..={ratio}",
                        r.line
                    )));
                }
                if cells.insert((r.t, k), r.value.unwrap()).is_some() {
                    return Err(fail(format!("duplicate observation at t={}, k={k}", r.t)));
                }
            }
            let horizon = cells.keys().map(|&(t, _)| t).max().unwrap_or(0);
            for t in 1..=horizon {
                let n = (1..=ratio).filter(|k| cells.contains_key(&(t, *k))).count();
                if n != ratio {
                    return Err(fail(format!(
                        "period t={t} has {n} of {ratio} high-frequency observations"
                    )));
                }
            }
            let values = Matrix::from_fn(horizon, ratio, |i, j| cells[&(i + 1, j + 1)]);
            Ok(UnitSeries {
                unit_id: id.to_string(),
                freq,
                outcomes: Outcomes::HighFreq(values),
                covariates,
            })
        }
    }
}

/// Writes every unit as CSV plus a `manifest.toml` into `dir`, returning the
/// manifest path. `load_panel` on the result reproduces the panel exactly.
pub fn write_panel<T: Scalar>(
    panel: &MixedPanel<T>,
    estimation: &EstimationConfig,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let write_unit = |unit: &UnitSeries<T>| -> Result<(PathBuf, Option<PathBuf>)> {
        let out_name = PathBuf::from(format!("{}_outcomes.csv", unit.unit_id));
        let mut text = String::from("t,k,value\n");
        match &unit.outcomes {
            Outcomes::Baseline(v) => {
                for (i, x) in v.iter().enumerate() {
                    text.push_str(&format!("{},,{}\n", i + 1, x));
                }
            }
            Outcomes::Sparse(v) => {
                for (t, x) in v {
                    text.push_str(&format!("{t},,{x}\n"));
                }
            }
            Outcomes::HighFreq(m) => {
                for i in 0..m.rows() {
                    for k in 0..m.cols() {
                        text.push_str(&format!("{},{},{}\n", i + 1, k + 1, m[(i, k)]));
                    }
                }
            }
        }
        write_file(&dir.join(&out_name), &text)?;
        let cov_name = match &unit.covariates {
            Some(c) => {
                let name = PathBuf::from(format!("{}_covariates.csv", unit.unit_id));
                let mut text = String::from("t,q,value\n");
                for i in 0..c.rows() {
                    for j in 0..c.cols() {
                        text.push_str(&format!("{},{},{}\n", i + 1, j + 1, c[(i, j)]));
                    }
                }
                write_file(&dir.join(&name), &text)?;
                Some(name)
            }
            None => None,
        };
        Ok((out_name, cov_name))
    };

    let (outcomes, covariates) = write_unit(&panel.treated)?;
    let treated = UnitEntry {
        id: panel.treated.unit_id.clone(),
        outcomes,
        covariates,
    };
    let mut donors = Vec::with_capacity(panel.donors.len());
    for d in &panel.donors {
        let (outcomes, covariates) = write_unit(d)?;
        let (freq, ratio, mode, offset) = match d.freq {
            FrequencyClass::Same => ("same", None, None, None),
            FrequencyClass::Higher { ratio } => ("higher", Some(ratio), None, None),
            FrequencyClass::Lower { ratio, mode } => match mode {
                LowFreqMode::Aggregate => ("lower", Some(ratio), Some("aggregate"), None),
                LowFreqMode::PointSample { offset } => {
                    ("lower", Some(ratio), Some("point_sample"), Some(offset))
                }
            },
        };
        donors.push(DonorEntry {
            id: d.unit_id.clone(),
            freq: freq.to_string(),
            ratio,
            mode: mode.map(str::to_string),
            offset,
            outcomes,
            covariates,
        });
    }
    let manifest = Manifest {
        t0: panel.t0,
        n_covariates: panel.q,
        estimation: estimation.clone(),
        treated,
        donors,
    };
    let path = dir.join("manifest.toml");
    write_file(&path, &manifest.to_toml_string())?;
    Ok(path)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
