//! Finite-difference gradient checking.
//!
//! Analytic gradients throughout the crate are validated against central
//! differences. The helpers here are used only by tests, but they live in the
//! library so integration suites (the acceptance harness in particular) can
//! reuse the exact same estimator.

/// Central-difference gradient of `f` at `x`, one coordinate at a time:
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)`.
pub fn finite_difference_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative L2 error `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps the ratio meaningful when both gradients are near zero.
pub fn relative_l2_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Step size used by the gradient suites.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error budget for analytic-vs-numeric agreement.
pub const FD_TOL: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_recovered() {
        // f(x) = sum x_i^2 has gradient 2x.
        let x = vec![0.5, -1.25, 2.0];
        let mut f = |v: &[f64]| v.iter().map(|&t| t * t).sum::<f64>();
        let num = finite_difference_grad(&mut f, &x, FD_STEP);
        let exact: Vec<f64> = x.iter().map(|&t| 2.0 * t).collect();
        assert!(relative_l2_error(&num, &exact, 1e-12) < 1e-8);
    }

    #[test]
    fn log_sum_exp_gradient_is_softmax() {
        let x = vec![0.3, -0.7, 1.1, 0.0];
        let mut f = |v: &[f64]| {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + v.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
        };
        let num = finite_difference_grad(&mut f, &x, FD_STEP);
        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.iter().map(|&t| (t - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let exact: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        assert!(relative_l2_error(&num, &exact, 1e-12) < FD_TOL);
    }

    #[test]
    fn relative_error_floor_handles_zero_gradients() {
        let a = vec![0.0, 0.0];
        let b = vec![0.0, 0.0];
        assert_eq!(relative_l2_error(&a, &b, 1e-12), 0.0);
    }
}
