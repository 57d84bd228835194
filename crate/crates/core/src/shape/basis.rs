//! Scalar regression bases `B_{j,n}(t)`.

use super::types::{BasisFamily, BasisSpec};
use crate::error::{domain, Result};

/// Binomial coefficient as a float; exact for the small orders used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

impl BasisFamily {
    /// `B_{j,n}(t)`. The caller guarantees `j <= n`.
    #[inline]
    pub fn eval_unchecked(self, j: usize, n: usize, t: f64) -> f64 {
        match self {
            BasisFamily::Polynomial => t.powi(j as i32),
            BasisFamily::Bernstein => {
                binomial(n, j) * (1.0 - t).powi((n - j) as i32) * t.powi(j as i32)
            }
            BasisFamily::CoxDeBoor => {
                let mut acc = 0.0;
                for l in 0..=(n - j) {
                    let base = t + (n - j) as f64 - l as f64;
                    // truncated power: negative bases contribute nothing
                    if base < 0.0 {
                        continue;
                    }
                    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * binomial(n + 1, l) * base.powi(n as i32);
                }
                acc / factorial(n)
            }
            BasisFamily::Trigonometric => {
                if j == 0 {
                    1.0
                } else if j % 2 == 1 {
                    ((j + 1) as f64 / 2.0 * t).cos()
                } else {
                    (j as f64 / 2.0 * t).sin()
                }
            }
        }
    }

    /// Fills `out[j] = B_{j,n}(t)` for `j = 0..=n`.
    pub fn eval_all(self, n: usize, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), n + 1);
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.eval_unchecked(j, n, t);
        }
    }
}

/// Evaluates basis function `j` of the curve order in `spec` at `rho`.
pub fn basis_eval(spec: &BasisSpec, j: usize, rho: f64) -> Result<f64> {
    if j > spec.n {
        return Err(domain(format!("basis index {j} exceeds order {}", spec.n)));
    }
    if !rho.is_finite() {
        return Err(domain("basis parameter must be finite"));
    }
    Ok(spec.family.eval_unchecked(j, spec.n, rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(family: BasisFamily, n: usize) -> BasisSpec {
        BasisSpec::curve(family, n)
    }

    #[test]
    fn reference_values() {
        assert!(
            (basis_eval(&spec(BasisFamily::Bernstein, 2), 1, 0.5).unwrap() - 0.5).abs() < 1e-15
        );
        assert!(
            (basis_eval(&spec(BasisFamily::Polynomial, 5), 2, 0.5).unwrap() - 0.25).abs() < 1e-15
        );
        for rho in [0.0, 0.3, 0.9] {
            assert_eq!(
                basis_eval(&spec(BasisFamily::Trigonometric, 4), 0, rho).unwrap(),
                1.0
            );
        }
        assert!(
            (basis_eval(&spec(BasisFamily::CoxDeBoor, 1), 0, 0.25).unwrap() - 0.75).abs() < 1e-15
        );
    }

    #[test]
    fn index_out_of_range() {
        assert!(basis_eval(&spec(BasisFamily::Bernstein, 3), 4, 0.5).is_err());
    }

    #[test]
    fn trigonometric_branches() {
        let s = spec(BasisFamily::Trigonometric, 4);
        let t = 0.7;
        assert!((basis_eval(&s, 1, t).unwrap() - t.cos()).abs() < 1e-15);
        assert!((basis_eval(&s, 2, t).unwrap() - t.sin()).abs() < 1e-15);
        assert!((basis_eval(&s, 3, t).unwrap() - (2.0 * t).cos()).abs() < 1e-15);
        assert!((basis_eval(&s, 4, t).unwrap() - (2.0 * t).sin()).abs() < 1e-15);
    }

    /// Uniform cubic B-spline segment polynomials, written out by hand.
    #[test]
    fn cox_deboor_cubic_matches_closed_form() {
        let s = spec(BasisFamily::CoxDeBoor, 3);
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let expected = [
                (1.0 - t).powi(3) / 6.0,
                (3.0 * t.powi(3) - 6.0 * t * t + 4.0) / 6.0,
                (-3.0 * t.powi(3) + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
                t.powi(3) / 6.0,
            ];
            // index j weights the (n-j)-shifted segment, so the order is reversed
            for j in 0..=3 {
                let got = basis_eval(&s, j, t).unwrap();
                assert!(
                    (got - expected[j]).abs() < 1e-12,
                    "j={j} t={t}: {got} vs {}",
                    expected[j]
                );
            }
        }
    }

    #[test]
    fn negative_bases_are_truncated() {
        // below zero only the truncated-power convention keeps the value finite and bounded
        let v = BasisFamily::CoxDeBoor.eval_unchecked(1, 1, -0.5);
        assert_eq!(v, 0.0);
    }

    proptest! {
        #[test]
        fn bernstein_partition_of_unity(n in 1usize..=10, t in 0.0f64..=1.0) {
            let sum: f64 = (0..=n).map(|j| BasisFamily::Bernstein.eval_unchecked(j, n, t)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn cox_deboor_partition_of_unity(n in 1usize..=8, t in 0.0f64..=1.0) {
            let sum: f64 = (0..=n).map(|j| BasisFamily::CoxDeBoor.eval_unchecked(j, n, t)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }
    }
}
