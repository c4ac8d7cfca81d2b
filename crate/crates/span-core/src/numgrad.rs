//! Central finite differences. Test-support oracle, kept independent of the
//! tape's backward rules: it only reruns a forward closure with perturbed
//! inputs.

/// Numeric gradient of `f` at `x` by central differences with step `h`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let x0 = xs[i];
        xs[i] = x0 + h;
        let fp = f(&xs);
        xs[i] = x0 - h;
        let fm = f(&xs);
        xs[i] = x0;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Elementwise relative error |a−n| / max(|a|, |n|, 1), maximized over the
/// vectors. The unit floor makes the measure absolute for near-zero slopes,
/// where finite differences bottom out at roundoff.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}
