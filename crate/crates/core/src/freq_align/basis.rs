use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Shifted-Legendre dictionary on `[0, 1]` with `degree` functions.
/// Function `ℓ` (1-based) is the Legendre polynomial of degree `ℓ − 1`
/// evaluated at `2x − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagPolyBasis {
    pub degree: usize,
}

impl LagPolyBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::domain("basis degree must be at least 1"));
        }
        Ok(Self { degree })
    }

    pub fn eval<T: Scalar>(&self, ell: usize, x: T) -> Result<T> {
        if ell > self.degree {
            return Err(Error::domain(format!(
                "basis index {ell} exceeds degree {}",
                self.degree
            )));
        }
        basis_eval(ell, x)
    }

    /// `m × L` matrix with entry `(k, ℓ)` equal to basis `ℓ+1` at `k/m`.
    pub fn lag_matrix<T: Scalar>(&self, m: usize) -> Matrix<T> {
        let mf = T::from_usize_lossy(m);
        Matrix::from_fn(m, self.degree, |k, l| {
            shifted_legendre(l, T::from_usize_lossy(k) / mf)
        })
    }

    /// Column sums of [`lag_matrix`](Self::lag_matrix): the total lag weight
    /// contributed by one unit of each coefficient.
    pub fn lag_sums<T: Scalar>(&self, m: usize) -> Vec<T> {
        let d = self.lag_matrix::<T>(m);
        (0..self.degree)
            .map(|l| (0..m).map(|k| d[(k, l)]).sum())
            .collect()
    }
}

impl Default for LagPolyBasis {
    fn default() -> Self {
        Self { degree: 3 }
    }
}

/// Value of the `ℓ`-th shifted-Legendre basis function at `x ∈ [0, 1]`.
pub fn basis_eval<T: Scalar>(ell: usize, x: T) -> Result<T> {
    if ell == 0 {
        return Err(Error::domain("basis index is 1-based"));
    }
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::domain(format!("basis argument {x} outside [0, 1]")));
    }
    Ok(shifted_legendre(ell - 1, x))
}

/// Bonnet recursion on `u = 2x − 1`.
fn shifted_legendre<T: Scalar>(n: usize, x: T) -> T {
    let u = T::lit(2.0) * x - T::one();
    let (mut p0, mut p1) = (T::one(), u);
    if n == 0 {
        return p0;
    }
    for k in 1..n {
        let kf = T::from_usize_lossy(k);
        let p2 = ((T::lit(2.0) * kf + T::one()) * u * p1 - kf * p0) / (kf + T::one());
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_values() {
        assert_eq!(basis_eval(1, 0.7).unwrap(), 1.0);
        assert_abs_diff_eq!(basis_eval(2, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(basis_eval(3, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn matches_closed_forms() {
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert_abs_diff_eq!(
                basis_eval(3, x).unwrap(),
                6.0 * x * x - 6.0 * x + 1.0,
                epsilon = 1e-14
            );
            let p3 = 20.0 * x.powi(3) - 30.0 * x * x + 12.0 * x - 1.0;
            assert_abs_diff_eq!(basis_eval(4, x).unwrap(), p3, epsilon = 1e-13);
        }
    }

    #[test]
    fn out_of_domain() {
        assert!(matches!(basis_eval(1, 1.5), Err(Error::Domain(_))));
        assert!(matches!(basis_eval(2, -0.1), Err(Error::Domain(_))));
        assert!(basis_eval(0, 0.5_f64).is_err());
        assert!(LagPolyBasis::new(2).unwrap().eval(3, 0.5_f64).is_err());
    }

    #[test]
    fn lag_sums_for_three_lags() {
        let s: Vec<f64> = LagPolyBasis::new(3).unwrap().lag_sums(3);
        // P1 at (−1, −1/3, 1/3) and P2 at (1, −1/3, −1/3)
        assert_abs_diff_eq!(s[0], 3.0);
        assert_abs_diff_eq!(s[1], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], 1.0 / 3.0, epsilon = 1e-15);
    }
}
