//! Central finite-difference oracle.
//!
//! Uses only forward evaluations, so it stays independent of the reverse-mode
//! rules it is used to check.

/// Numerical gradient of `f` at `x` with central differences of step `h`.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error `|a − n| / max(|a|, |n|, floor)`.
///
/// `floor` keeps entries whose true gradient is (near) zero from dividing
/// roundoff noise by zero.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / floor.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}
