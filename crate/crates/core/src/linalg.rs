//! Small dense-solve helpers so the numeric policy sits in one place.

use nalgebra::{DMatrix, DVector, Dyn, SVD};

/// Condition number beyond which plain least squares gives way to
/// Tikhonov-stabilized solves.
pub(crate) const LS_CONDITION_LIMIT: f64 = 1e10;

/// One SVD factorization reused across several right-hand sides.
pub(crate) struct LsSolver {
    svd: SVD<f64, Dyn, Dyn>,
    cond: f64,
}

impl LsSolver {
    pub(crate) fn new(design: &DMatrix<f64>) -> Self {
        let svd = design.clone().svd(true, true);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &s in svd.singular_values.iter() {
            lo = lo.min(s);
            hi = hi.max(s);
        }
        Self {
            svd,
            cond: condition_from_extrema(lo, hi),
        }
    }

    #[cfg(test)]
    pub(crate) fn condition(&self) -> f64 {
        self.cond
    }

    /// Unpenalized least-squares solution, or `None` when the design is too
    /// ill-conditioned to trust and the caller should regularize instead.
    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        if self.cond > LS_CONDITION_LIMIT {
            return None;
        }
        self.svd.solve(rhs, 0.0).ok()
    }
}

/// Smallest and largest singular values of `m`.
pub(crate) fn singular_extrema(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &s in sv.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    (lo, hi)
}

/// 2-norm condition number from singular extrema; infinite when rank-deficient.
pub(crate) fn condition_from_extrema(lo: f64, hi: f64) -> f64 {
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solve `m x = rhs` by LU with partial pivoting.
pub(crate) fn lu_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().lu().solve(rhs)
}

/// Solve `mᵀ x = rhs`.
pub(crate) fn lu_solve_transpose(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.transpose().lu().solve(rhs)
}

/// Solve the ridge-stabilized normal equations `(mᵀm + λI) x = mᵀ rhs`.
///
/// Tries Cholesky first (the system is symmetric positive semi-definite) and
/// falls back to LU; returns `None` only if both factorizations fail, which
/// requires λ = 0 and a rank-deficient `m`.
pub(crate) fn ridge_normal_solve(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    lambda: f64,
) -> Option<DVector<f64>> {
    let mut gram = m.tr_mul(m);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let atb = m.tr_mul(rhs);
    if let Some(chol) = gram.clone().cholesky() {
        return Some(chol.solve(&atb));
    }
    gram.lu().solve(&atb)
}
