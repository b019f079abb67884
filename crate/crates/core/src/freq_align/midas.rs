use serde::{Deserialize, Serialize};

use super::LagPolyBasis;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, Matrix};
use crate::panel::{FrequencyClass, UnitSeries};
use crate::Scalar;

/// Dictionary MIDAS weights for one high-frequency donor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct MidasWeights<T> {
    pub unit_id: String,
    pub m: usize,
    pub zeta: Vec<T>,
    /// Per-lag weights; index `k − 1` is the lag `(k − 1)/m` inside a period.
    pub weights: Vec<T>,
}

impl<T: Scalar> MidasWeights<T> {
    pub fn with_unit(mut self, unit_id: impl Into<String>) -> Self {
        self.unit_id = unit_id.into();
        self
    }

    /// Equal weight `1/m` on every lag.
    pub fn uniform(m: usize, basis: &LagPolyBasis) -> Result<Self> {
        let mut zeta = vec![T::zero(); basis.degree];
        zeta[0] = T::one() / T::from_usize_lossy(m.max(1));
        build_midas_weights(&zeta, m, basis)
    }

    pub fn weight_sum(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

/// Evaluates `B(k; ζ) = Σ_ℓ ζ_ℓ · basis_ℓ((k − 1)/m)` for `k = 1..m`. No
/// normalization is applied.
pub fn build_midas_weights<T: Scalar>(
    zeta: &[T],
    m: usize,
    basis: &LagPolyBasis,
) -> Result<MidasWeights<T>> {
    if m < 1 {
        return Err(Error::domain("MIDAS ratio m must be at least 1"));
    }
    if zeta.len() != basis.degree {
        return Err(Error::domain(format!(
            "zeta has {} coefficients, basis has {}",
            zeta.len(),
            basis.degree
        )));
    }
    let d = basis.lag_matrix::<T>(m);
    Ok(MidasWeights {
        unit_id: String::new(),
        m,
        zeta: zeta.to_vec(),
        weights: d.mul_vec(zeta),
    })
}

/// Least-squares dictionary coefficients reproducing the given per-lag
/// weights. Exact whenever `degree ≥ m`.
pub fn zeta_for_weights<T: Scalar>(weights: &[T], basis: &LagPolyBasis) -> Result<Vec<T>> {
    let m = weights.len();
    let d: Matrix<T> = basis.lag_matrix(m);
    if basis.degree > m {
        return Err(Error::domain(format!(
            "basis degree {} exceeds the number of lags {m}",
            basis.degree
        )));
    }
    let sol = lstsq(&d, weights, T::effective_tol(1e-12));
    if sol.rank < basis.degree {
        return Err(Error::domain("lag dictionary is rank deficient"));
    }
    Ok(sol.coef)
}

/// `Ȳ_t = Σ_k B(k) · Y_{t − (k−1)/m}` for every baseline period.
pub fn align_high_freq<T: Scalar>(series: &UnitSeries<T>, w: &MidasWeights<T>) -> Result<Vec<T>> {
    let FrequencyClass::Higher { ratio } = series.freq else {
        return Err(Error::domain(format!(
            "unit `{}` is not a high-frequency series",
            series.unit_id
        )));
    };
    if ratio != w.m || w.weights.len() != ratio {
        return Err(Error::domain(format!(
            "unit `{}` has m = {ratio}, MIDAS weights have m = {}",
            series.unit_id, w.m
        )));
    }
    let values = series
        .high_freq()
        .ok_or_else(|| Error::domain("high-frequency outcomes missing"))?;
    Ok(values.mul_vec(&w.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn basis3() -> LagPolyBasis {
        LagPolyBasis::new(3).unwrap()
    }

    fn hf_unit(rows: Vec<Vec<f64>>) -> UnitSeries<f64> {
        let m = rows[0].len();
        let flat: Vec<f64> = rows.concat();
        UnitSeries::higher("h", Matrix::from_row_major(flat.len() / m, m, flat), None)
    }

    #[test]
    fn constant_basis_gives_uniform() {
        let w = build_midas_weights(&[1.0 / 3.0, 0.0, 0.0], 3, &basis3()).unwrap();
        for v in &w.weights {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let z = build_midas_weights(&[0.0, 0.0, 0.0], 3, &basis3()).unwrap();
        assert!(z.weights.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_evaluated_weights() {
        let w = build_midas_weights(&[1.0 / 3.0, 1.0 / 3.0, 0.0], 3, &basis3()).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weights[1], 2.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weights[2], 4.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_ratio_rejected() {
        assert!(build_midas_weights(&[1.0, 0.0, 0.0], 0, &basis3()).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let unit = hf_unit(vec![vec![3.0, 6.0, 9.0], vec![1.0, 2.0, 3.0]]);
        let uniform = MidasWeights::uniform(3, &basis3()).unwrap();
        assert_abs_diff_eq!(
            align_high_freq(&unit, &uniform).unwrap()[0],
            6.0,
            epsilon = 1e-14
        );

        let selector = build_midas_weights(
            &zeta_for_weights(&[1.0, 0.0, 0.0], &basis3()).unwrap(),
            3,
            &basis3(),
        )
        .unwrap();
        assert_abs_diff_eq!(
            align_high_freq(&unit, &selector).unwrap()[0],
            3.0,
            epsilon = 1e-13
        );

        let w = build_midas_weights(&[1.0 / 3.0, 1.0 / 3.0, 0.0], 3, &basis3()).unwrap();
        assert_abs_diff_eq!(
            align_high_freq(&unit, &w).unwrap()[1],
            16.0 / 9.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn mismatched_ratio() {
        let unit = hf_unit(vec![vec![1.0, 2.0, 3.0]]);
        let w = MidasWeights::uniform(4, &basis3()).unwrap();
        assert!(matches!(align_high_freq(&unit, &w), Err(Error::Domain(_))));
    }

    #[test]
    fn zeta_round_trip() {
        let b = [0.5, 1.0 / 3.0, 1.0 / 6.0];
        let zeta = zeta_for_weights(&b, &basis3()).unwrap();
        let w = build_midas_weights(&zeta, 3, &basis3()).unwrap();
        for (x, y) in w.weights.iter().zip(b) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-14);
        }
    }
}
