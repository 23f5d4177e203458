use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Pivot floor relative to the largest diagonal entry.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Cholesky factorisation that also rejects numerically singular matrices:
/// any squared pivot below `PIVOT_RTOL * max(diag)` counts as singular.
pub fn guarded_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return None;
    }
    let max_diag = m.diagonal().iter().fold(0.0_f64, |acc, &d| acc.max(d));
    if max_diag.is_nan() || max_diag <= 0.0 || m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(m.clone())?;
    let floor = PIVOT_RTOL * max_diag;
    let l = chol.l_dirty();
    if (0..m.nrows()).any(|i| l[(i, i)] * l[(i, i)] < floor) {
        return None;
    }
    Some(chol)
}

pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    guarded_cholesky(m).map(|c| c.solve(b))
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    guarded_cholesky(m).map(|c| c.inverse())
}
