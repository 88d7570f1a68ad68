//! Central finite-difference gradient checker.

/// Floor on the gradient scale so an all-zero gradient is compared in
/// absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|analytic − numeric| / max(scale, RELATIVE_FLOOR)`, where `scale` is the
/// largest numeric gradient magnitude of the parameter block.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / scale.max(RELATIVE_FLOOR)
}

/// Compares `analytic` against central differences of `f` around `params`
/// with step `h`. Each coordinate's error is measured against the block's
/// largest numeric gradient, so coordinates whose true gradient is tiny are
/// not swamped by the `O(h²)` truncation term; the worst coordinate is
/// returned.
pub fn grad_check(
    params: &[f64],
    analytic: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradient length");
    assert!(h > 0.0, "step must be positive");
    let mut probe = params.to_vec();
    let numeric: Vec<f64> = (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, scale))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let coef = [3.0, -1.5, 0.25, 7.0];
        let x = [0.3, -2.0, 1.1, 0.0];
        let f = |p: &[f64]| p.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
        assert!(grad_check(&x, &coef, 1e-3, f) <= 1e-10);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let x = [0.5, -1.0, 2.0];
        let f = |p: &[f64]| p.iter().map(|v| v * v * v).sum::<f64>();
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * 3.0 * v * v).collect();
        let err = grad_check(&x, &doubled, 1e-3, f);
        assert!((err - 1.0).abs() < 1e-4, "err {err}");
    }
}
