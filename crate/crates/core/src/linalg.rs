//! Small dense helpers shared by the fitting and estimation code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Upper bound on `cond(AᵀA)` before a least-squares solve is rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Solves `min ‖A X − B‖_F` through an SVD of `A`, rejecting the problem when
/// the normal matrix `AᵀA` would have condition number above `limit`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, limit: f64) -> Result<DMatrix<f64>> {
    let (x, _) = lstsq_with_condition(a, b, limit)?;
    Ok(x)
}

/// As [`lstsq`], also returning `cond(AᵀA)`.
pub fn lstsq_with_condition(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    limit: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(condition <= limit) {
        return Err(Error::SingularFit { condition, limit });
    }
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let mut utb = u.transpose() * b;
    for (i, s) in svd.singular_values.iter().enumerate() {
        utb.row_mut(i).scale_mut(1.0 / s);
    }
    Ok((v_t.transpose() * utb, condition))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eig: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let b = &a * &x;
        let got = lstsq(&a, &b, CONDITION_LIMIT).unwrap();
        assert!((got - x).norm() < 1e-12);
    }

    #[test]
    fn rejects_rank_deficient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DMatrix::zeros(3, 1);
        assert!(matches!(
            lstsq(&a, &b, CONDITION_LIMIT),
            Err(Error::SingularFit { .. })
        ));
    }
}
