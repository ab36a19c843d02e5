use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `(I − scale·M) x = b` for a row-major square `M`.
pub(crate) fn solve_resolvent(n: usize, m: &[f64], scale: f64, b: &[f64]) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - scale * m[i * n + j]
    });
    solve(a, b)
}

/// Solves `(I − scale·M)ᵀ x = b`, i.e. `xᵀ (I − scale·M) = bᵀ`.
pub(crate) fn solve_resolvent_transposed(
    n: usize,
    m: &[f64],
    scale: f64,
    b: &[f64],
) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - scale * m[j * n + i]
    });
    solve(a, b)
}

fn solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem("LU factorization failed"))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("solution is not finite"));
    }
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolvent_of_identity_scales() {
        // (I − 0.5 I) x = b  ⇒  x = 2b
        let m = [1.0, 0.0, 0.0, 1.0];
        let x = solve_resolvent(2, &m, 0.5, &[1.0, 3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn transposed_solve_matches_manual() {
        let m = [0.0, 1.0, 0.0, 0.0];
        // (I − M)ᵀ = [[1, 0], [-1, 1]]
        let x = solve_resolvent_transposed(2, &m, 1.0, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_system_is_reported() {
        let m = [1.0];
        assert!(solve_resolvent(1, &m, 1.0, &[1.0]).is_err());
    }
}
