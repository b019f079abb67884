use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freq_align::LagPolyBasis;
use crate::linalg::{dot, Matrix};
use crate::Scalar;

/// One donor's contribution to the stacked design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub enum DesignColumn<T> {
    /// Aligned outcomes over scaled covariates, length `(Q + 1)·T0`.
    Fixed(Vec<T>),
    /// High-frequency block: `T0 × m` outcomes and the scaled covariate rows
    /// (length `Q·T0`).
    HighFreq {
        outcomes: Matrix<T>,
        covariates: Vec<T>,
    },
}

/// Stacked pre-treatment design: rows `0..T0` are outcomes, the remaining
/// `Q·T0` rows are covariates (covariate-major) multiplied by
/// `covariate_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct AlignedDesign<T> {
    pub z1: Vec<T>,
    pub columns: Vec<DesignColumn<T>>,
    pub t0: usize,
    pub q: usize,
    pub covariate_scale: T,
}

impl<T: Scalar> AlignedDesign<T> {
    /// Default covariate scale `1/√T0`.
    pub fn default_scale(t0: usize) -> T {
        T::one() / T::from_usize_lossy(t0).sqrt()
    }

    pub fn n_rows(&self) -> usize {
        (self.q + 1) * self.t0
    }

    /// Stacks `t0` outcome values over the first `t0` covariate rows.
    pub fn stack(
        outcomes: &[T],
        covariates: Option<&Matrix<T>>,
        t0: usize,
        q: usize,
        scale: T,
    ) -> Vec<T> {
        let mut v = outcomes[..t0].to_vec();
        v.extend(Self::covariate_rows(covariates, t0, q, scale));
        v
    }

    pub fn covariate_rows(covariates: Option<&Matrix<T>>, t0: usize, q: usize, scale: T) -> Vec<T> {
        let mut v = Vec::with_capacity(q * t0);
        if let Some(x) = covariates {
            for qi in 0..q {
                for t in 0..t0 {
                    v.push(x[(t, qi)] * scale);
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if self.t0 == 0 {
            return Err(Error::domain("design has no pre-treatment rows"));
        }
        if self.z1.len() != n {
            return Err(Error::domain(format!(
                "target has {} rows, expected {n}",
                self.z1.len()
            )));
        }
        if self.columns.is_empty() {
            return Err(Error::domain("donor pool is empty"));
        }
        for (j, c) in self.columns.iter().enumerate() {
            let ok = match c {
                DesignColumn::Fixed(v) => v.len() == n,
                DesignColumn::HighFreq {
                    outcomes,
                    covariates,
                } => {
                    outcomes.rows() == self.t0
                        && covariates.len() == self.q * self.t0
                        && outcomes.cols() >= 1
                }
            };
            if !ok {
                return Err(Error::domain(format!(
                    "design column {j} has inconsistent shape"
                )));
            }
        }
        Ok(())
    }

    /// Collapses every high-frequency block with the given per-lag weights,
    /// producing an all-fixed design. `lag_weights[j]` is ignored for fixed
    /// columns.
    pub fn collapsed(&self, lag_weights: &[Option<Vec<T>>]) -> Result<Matrix<T>> {
        let cols: Vec<Vec<T>> = self
            .columns
            .iter()
            .zip(lag_weights)
            .map(|(c, b)| match (c, b) {
                (DesignColumn::Fixed(v), _) => Ok(v.clone()),
                (
                    DesignColumn::HighFreq {
                        outcomes,
                        covariates,
                    },
                    Some(b),
                ) => {
                    let total: T = b.iter().copied().sum();
                    let mut v = outcomes.mul_vec(b);
                    v.extend(covariates.iter().map(|x| *x * total));
                    Ok(v)
                }
                _ => Err(Error::domain(
                    "missing lag weights for a high-frequency column",
                )),
            })
            .collect::<Result<_>>()?;
        Ok(Matrix::from_columns(&cols))
    }
}

/// How a donor's variables enter the lifted problem.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind<T> {
    /// A single unit weight `w_j ≥ 0`.
    Fixed,
    /// Lifted coefficients `η_j = w_j·ζ_j ∈ ℝ^L`; per-lag weights are
    /// `lag_matrix · η_j` and the unit weight is `lag_sums' η_j`.
    Midas {
        lag_matrix: Matrix<T>,
        lag_sums: Vec<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock<T> {
    /// Position of the donor in the design.
    pub donor: usize,
    pub offset: usize,
    pub kind: BlockKind<T>,
}

impl<T: Scalar> VarBlock<T> {
    pub fn len(&self) -> usize {
        match &self.kind {
            BlockKind::Fixed => 1,
            BlockKind::Midas { lag_sums, .. } => lag_sums.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unit weight implied by the block's variables.
    pub fn unit_weight(&self, x: &[T]) -> T {
        let xs = &x[self.offset..self.offset + self.len()];
        match &self.kind {
            BlockKind::Fixed => xs[0],
            BlockKind::Midas { lag_sums, .. } => dot(lag_sums, xs),
        }
    }
}

/// Canonical QP `min ½x'Hx + g'x + c` subject to `C x ≥ 0` and `a'x = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexQP<T> {
    pub hessian: Matrix<T>,
    pub linear: Vec<T>,
    pub constant: T,
    pub blocks: Vec<VarBlock<T>>,
    /// Rows of `C`.
    pub inequalities: Matrix<T>,
    /// The vector `a` of the equality constraint.
    pub sum_coeffs: Vec<T>,
    /// Lifted least-squares form `(A, z, 1/T0)` when available, used for an
    /// exact objective evaluation.
    pub least_squares: Option<(Matrix<T>, Vec<T>, T)>,
}

impl<T: Scalar> SimplexQP<T> {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// QP for `norm·‖z − A x‖²` over the given blocks.
    pub fn from_least_squares(
        a: Matrix<T>,
        z: Vec<T>,
        norm: T,
        blocks: Vec<VarBlock<T>>,
        nonneg_midas: bool,
    ) -> Self {
        let two = T::lit(2.0);
        let hessian = a.gram().scale(two * norm);
        let linear: Vec<T> = a.tr_mul_vec(&z).iter().map(|v| -two * norm * *v).collect();
        let constant = dot(&z, &z) * norm;
        let mut qp = Self::from_parts(hessian, linear, constant, blocks, nonneg_midas);
        qp.least_squares = Some((a, z, norm));
        qp
    }

    /// QP for `norm·(x'Gx − 2h'x + c)` given accumulated moments.
    pub fn from_moments(
        g: &Matrix<T>,
        h: &[T],
        c: T,
        norm: T,
        blocks: Vec<VarBlock<T>>,
        nonneg_midas: bool,
    ) -> Self {
        let two = T::lit(2.0);
        let hessian = g.scale(two * norm);
        let linear = h.iter().map(|v| -two * norm * *v).collect();
        Self::from_parts(hessian, linear, c * norm, blocks, nonneg_midas)
    }

    fn from_parts(
        hessian: Matrix<T>,
        linear: Vec<T>,
        constant: T,
        blocks: Vec<VarBlock<T>>,
        nonneg_midas: bool,
    ) -> Self {
        let d = linear.len();
        let mut rows: Vec<Vec<T>> = Vec::new();
        let mut sum_coeffs = vec![T::zero(); d];
        for b in &blocks {
            match &b.kind {
                BlockKind::Fixed => {
                    let mut r = vec![T::zero(); d];
                    r[b.offset] = T::one();
                    rows.push(r);
                    sum_coeffs[b.offset] = T::one();
                }
                BlockKind::Midas {
                    lag_matrix,
                    lag_sums,
                } => {
                    sum_coeffs[b.offset..b.offset + lag_sums.len()].copy_from_slice(lag_sums);
                    if nonneg_midas {
                        for k in 0..lag_matrix.rows() {
                            let mut r = vec![T::zero(); d];
                            r[b.offset..b.offset + lag_sums.len()]
                                .copy_from_slice(lag_matrix.row(k));
                            rows.push(r);
                        }
                    } else {
                        let mut r = vec![T::zero(); d];
                        r[b.offset..b.offset + lag_sums.len()].copy_from_slice(lag_sums);
                        rows.push(r);
                    }
                }
            }
        }
        let n_rows = rows.len();
        let inequalities = Matrix::from_row_major(n_rows, d, rows.concat());
        Self {
            hessian,
            linear,
            constant,
            blocks,
            inequalities,
            sum_coeffs,
            least_squares: None,
        }
    }

    pub fn objective(&self, x: &[T]) -> T {
        match &self.least_squares {
            Some((a, z, norm)) => {
                let r: T = a
                    .mul_vec(x)
                    .iter()
                    .zip(z)
                    .map(|(p, q)| (*q - *p) * (*q - *p))
                    .sum();
                r * *norm
            }
            None => self.quadratic_objective(x),
        }
    }

    pub(crate) fn quadratic_objective(&self, x: &[T]) -> T {
        T::lit(0.5) * self.hessian.quad_form(x) + dot(&self.linear, x) + self.constant
    }

    /// Checks symmetry within `1e−12` and PSD-ness within `−1e−10`
    /// (both relative to the largest Hessian entry).
    pub fn validate(&self) -> Result<()> {
        let scale = self.hessian.max_abs().max(T::one());
        match self.hessian.asymmetry() {
            Some(a) if a <= T::effective_tol(1e-12) * scale => {}
            _ => return Err(Error::domain("QP Hessian is not symmetric")),
        }
        let ev = crate::linalg::symmetric_eigenvalues(&self.hessian);
        if let Some(&lo) = ev.first() {
            if lo < -T::effective_tol(1e-10) * scale {
                return Err(Error::domain(format!("QP Hessian has eigenvalue {lo}")));
            }
        }
        Ok(())
    }

    /// Feasible starting point: every unit weight `1/J`, MIDAS blocks flat.
    pub fn feasible_start(&self) -> Vec<T> {
        let mut x = vec![T::zero(); self.dim()];
        let jf = T::from_usize_lossy(self.blocks.len());
        for b in &self.blocks {
            match &b.kind {
                BlockKind::Fixed => x[b.offset] = T::one() / jf,
                BlockKind::Midas { lag_sums, .. } => x[b.offset] = T::one() / (jf * lag_sums[0]),
            }
        }
        x
    }
}

/// Lifted convex problem over `(w_j)` for fixed columns and `η_j = w_j·ζ_j`
/// for high-frequency blocks, with objective `(1/T0)·‖z1 − A(w, η)‖²`.
pub fn build_lifted_problem<T: Scalar>(
    design: &AlignedDesign<T>,
    basis: &LagPolyBasis,
    nonneg_midas: bool,
) -> Result<SimplexQP<T>> {
    design.validate()?;
    let n = design.n_rows();
    let mut cols: Vec<Vec<T>> = Vec::new();
    let mut blocks = Vec::with_capacity(design.columns.len());
    for (j, c) in design.columns.iter().enumerate() {
        let offset = cols.len();
        match c {
            DesignColumn::Fixed(v) => {
                cols.push(v.clone());
                blocks.push(VarBlock {
                    donor: j,
                    offset,
                    kind: BlockKind::Fixed,
                });
            }
            DesignColumn::HighFreq {
                outcomes,
                covariates,
            } => {
                let m = outcomes.cols();
                let d = basis.lag_matrix::<T>(m);
                let s = basis.lag_sums::<T>(m);
                let feats = outcomes.matmul(&d);
                for l in 0..basis.degree {
                    let mut v = Vec::with_capacity(n);
                    v.extend((0..design.t0).map(|t| feats[(t, l)]));
                    v.extend(covariates.iter().map(|x| *x * s[l]));
                    cols.push(v);
                }
                blocks.push(VarBlock {
                    donor: j,
                    offset,
                    kind: BlockKind::Midas {
                        lag_matrix: d,
                        lag_sums: s,
                    },
                });
            }
        }
    }
    let a = Matrix::from_columns(&cols);
    let norm = T::one() / T::from_usize_lossy(design.t0);
    Ok(SimplexQP::from_least_squares(
        a,
        design.z1.clone(),
        norm,
        blocks,
        nonneg_midas,
    ))
}
