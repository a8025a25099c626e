use crate::error::{KsError, Result};

/// Solve a tridiagonal system with the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused), `upper[i]`
/// multiplies `x[i+1]` (`upper[last]` unused).
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = diag.len();
    if lower.len() != m || upper.len() != m || rhs.len() != m {
        return Err(KsError::InvalidInput("tridiagonal bands of unequal length".into()));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(KsError::NumericalInconsistency("zero pivot in tridiagonal solve at row 0".into()));
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..m {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(KsError::NumericalInconsistency(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        c[i] = if i + 1 < m { upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    for i in (0..m - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}
