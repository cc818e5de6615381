//! Trapezoid quadrature with successive interval halving and Richardson
//! extrapolation (Romberg). Refinement stops once two consecutive diagonal
//! estimates agree to within the tolerance.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    /// Absolute tolerance on successive estimates.
    pub tolerance: f64,
    /// Halvings performed before convergence may be declared.
    pub min_levels: usize,
    /// Halvings after which the integral is reported as non-convergent.
    pub max_levels: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            min_levels: 5,
            max_levels: 22,
        }
    }
}

impl Quadrature {
    pub fn integrate<F>(&self, f: F, lower: f64, upper: f64) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quadrature bounds must be finite, got [{lower}, {upper}]"
            )));
        }
        if lower == upper {
            return Ok(0.0);
        }
        let width = upper - lower;
        let mut previous_row: Vec<f64> = vec![0.5 * width * (f(lower) + f(upper))];
        let mut intervals: u64 = 1;
        let mut residual = f64::INFINITY;

        for level in 1..=self.max_levels {
            let h = width / (2 * intervals) as f64;
            let midpoints: f64 = (0..intervals)
                .map(|i| f(lower + (2 * i + 1) as f64 * h))
                .sum();
            intervals *= 2;

            let mut row = Vec::with_capacity(level + 1);
            row.push(0.5 * previous_row[0] + h * midpoints);
            let mut factor = 1.0;
            for j in 1..=level {
                factor *= 4.0;
                let refined = row[j - 1] + (row[j - 1] - previous_row[j - 1]) / (factor - 1.0);
                row.push(refined);
            }

            let estimate = row[level];
            if !estimate.is_finite() {
                break;
            }
            residual = (estimate - previous_row[level - 1]).abs();
            if level >= self.min_levels && residual < self.tolerance {
                return Ok(estimate);
            }
            previous_row = row;
        }

        Err(Error::Quadrature {
            lower,
            upper,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn integrates_polynomial_exactly() {
        let q = Quadrature::default();
        let v = q.integrate(|x| 3.0 * x * x + 1.0, 0.0, 2.0).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn integrates_standard_normal_density() {
        let q = Quadrature::default();
        let v = q
            .integrate(|x| (-0.5 * x * x).exp() / (2.0 * PI).sqrt(), -10.0, 10.0)
            .unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence_with_residual() {
        let q = Quadrature {
            tolerance: 1e-14,
            min_levels: 1,
            max_levels: 3,
        };
        match q.integrate(|x| (50.0 * x).sin(), 0.0, 3.0) {
            Err(Error::Quadrature { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(Quadrature::default().integrate(|x| x, 1.0, 1.0).unwrap(), 0.0);
    }
}
