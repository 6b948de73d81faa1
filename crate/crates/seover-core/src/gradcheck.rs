//! Numerical gradient checking via central finite differences.
//!
//! The checker only ever calls the forward path, so it stays independent
//! of the tape's backward rules and can arbitrate between them.

/// Central-difference gradient of a scalar function at `x` with step `h`.
pub fn finite_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Element-wise relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(abs_floor);
    (analytic - numeric).abs() / denom
}

/// Worst element-wise relative error between two gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n, abs_floor))
        .fold(0.0, f64::max)
}

/// Assert that an analytic gradient matches central finite differences of
/// the forward function, element-wise, within `tol` relative error
/// (absolute floor 1e-8). Panics with the offending values otherwise.
pub fn assert_grad_matches<F>(f: F, x: &[f64], analytic: &[f64], h: f64, tol: f64, what: &str)
where
    F: Fn(&[f64]) -> f64,
{
    let numeric = finite_difference(&f, x, h);
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient length");
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(*a, *n, 1e-8);
        assert!(
            err <= tol,
            "{what}: gradient mismatch at [{i}]: analytic={a:.10e}, numeric={n:.10e}, rel={err:.3e}"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum x_i^2 has gradient 2x.
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum();
        let x = [1.0, -2.0, 0.5];
        let g = finite_difference(f, &x, 1e-5);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn relative_error_floor_handles_zero() {
        assert!(relative_error(0.0, 1e-12, 1e-8) < 1e-3);
    }
}
