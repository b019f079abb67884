//! Weight optimization.
//!
//! The fixed-column problems (simplex least squares, metric projections) are
//! solved exactly with Wolfe's minimum-norm-point method. The joint problem
//! over unit weights and MIDAS coefficients is lifted to a convex QP in
//! `(w, η = w·ζ)` and solved by projected gradient.

mod design;
mod joint;
mod simplex;

pub use design::{
    build_lifted_problem, AlignedDesign, BlockKind, DesignColumn, SimplexQP, VarBlock,
};
pub use joint::{solve_joint, ZETA_RECOVERY_THRESHOLD};
pub use simplex::{project_metric, project_simplex, solve_ols, solve_simplex_ls};

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Iteration budget exhausted; the best iterate is returned.
    MaxIter,
    /// No further progress possible at working precision.
    Stalled,
}

/// Solution of a weight problem. For fixed-column problems `x == w` and
/// `zeta` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct JointSolution<T> {
    /// Unit weight per donor block, in block order.
    pub w: Vec<T>,
    /// `(block index, ζ)` for every MIDAS block.
    pub zeta: Vec<(usize, Vec<T>)>,
    /// Raw lifted variables.
    pub x: Vec<T>,
    pub objective: T,
    pub iterations: usize,
    pub status: SolveStatus,
    pub kkt_residual: T,
    /// MIDAS blocks whose unit weight fell below the recovery threshold;
    /// their `ζ` is reported as uniform.
    pub degenerate_units: Vec<usize>,
    /// Groups of fixed columns that are numerically identical, so the split
    /// of weight among them is not identified.
    pub duplicate_groups: Vec<Vec<usize>>,
    #[serde(skip)]
    pub objective_trace: Vec<T>,
}

impl<T: Scalar> JointSolution<T> {
    pub fn non_unique(&self) -> bool {
        !self.duplicate_groups.is_empty()
    }
}

/// Fixed-column variables `i, j` are duplicates when their quadratic and
/// linear coefficients coincide. `candidates` limits the search.
pub(crate) fn duplicate_groups_from_hessian<T: Scalar>(
    h: &Matrix<T>,
    candidates: Option<&[usize]>,
) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..h.rows()).collect();
    let idx = candidates.unwrap_or(&all);
    let scale = h.max_abs().max(T::min_positive_value());
    let tol = T::effective_tol(1e-12) * scale;
    let mut assigned = vec![false; idx.len()];
    let mut groups = Vec::new();
    for a in 0..idx.len() {
        if assigned[a] {
            continue;
        }
        let i = idx[a];
        let mut group = vec![i];
        for b in (a + 1)..idx.len() {
            let j = idx[b];
            if assigned[b] {
                continue;
            }
            let same = (h[(i, i)] - h[(j, j)]).abs() <= tol
                && (h[(i, i)] - h[(i, j)]).abs() <= tol
                && (0..h.cols()).all(|c| (h[(i, c)] - h[(j, c)]).abs() <= tol);
            if same {
                assigned[b] = true;
                group.push(j);
            }
        }
        if group.len() > 1 {
            groups.push(group);
        }
    }
    groups
}
