//! Central finite-difference gradient checking.
//!
//! These helpers treat a model as a flat parameter vector and compare
//! analytic gradients against `(f(x + e) - f(x - e)) / 2e`. They stay
//! independent of any backward-pass code so they can serve as the oracle
//! for it.

/// Central-difference gradient of `f` at `params`.
pub fn numerical_gradient<F>(mut f: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = f(&work);
        work[i] = orig - eps;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Worst relative disagreement between two gradients:
/// `|a - n| / max(floor, |a| + |n|)` over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_recovered() {
        // f(x) = sum x_i^2, df/dx_i = 2 x_i
        let params = [0.3, -1.2, 2.0];
        let numeric = numerical_gradient(|p| p.iter().map(|v| v * v).sum(), &params, 1e-5);
        let analytic: Vec<f64> = params.iter().map(|v| 2.0 * v).collect();
        assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-8);
    }
}
