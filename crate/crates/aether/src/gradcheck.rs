//! Central finite-difference gradient checking.
//!
//! Perturbs one coordinate at a time and compares `(f(x+h) - f(x-h)) / 2h`
//! against the analytic gradient. Lives in the library so unit tests and the
//! acceptance suite share one harness; it evaluates the function as a black
//! box and is independent of how any gradient under test was derived.

/// Maximum relative error between analytic and central-difference gradients
/// over every coordinate of `x`. The denominator is floored at 1e-6 so
/// near-zero coordinates compare absolutely against finite-difference noise.
pub fn central_diff_max_rel_err(
    x: &mut [f64],
    analytic: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(x);
        x[i] = orig - h;
        let fm = f(x);
        x[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
        let rel = (fd - analytic[i]).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
