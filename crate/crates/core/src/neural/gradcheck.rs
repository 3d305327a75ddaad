//! Central finite-difference gradient checking.

use crate::num::{real, Real};

/// Numerically differentiate `f` at `x` with central differences.
pub fn finite_diff<T: Real>(mut f: impl FnMut(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    let mut xs = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let plus = f(&xs);
            xs[i] = orig - h;
            let minus = f(&xs);
            xs[i] = orig;
            (plus - minus) / two_h
        })
        .collect()
}

/// Largest relative error between analytic and numeric gradients. The
/// denominator is floored so near-zero components compare absolutely.
pub fn max_rel_error<T: Real>(analytic: &[T], numeric: &[T]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let floor = real::<T>(1e-4);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| ((a - n).abs() / a.abs().max(n.abs()).max(floor)).to_f64_lossy())
        .fold(0.0, f64::max)
}

/// Assert an analytic gradient against central differences.
pub fn assert_grad<T: Real>(
    f: impl FnMut(&[T]) -> T,
    x: &[T],
    analytic: &[T],
    h: T,
    tol: f64,
    what: &str,
) {
    let numeric = finite_diff(f, x, h);
    let err = max_rel_error(analytic, &numeric);
    assert!(
        err <= tol,
        "{what}: gradient check failed, max rel error {err:.3e} > {tol:.1e}\n analytic: {analytic:?}\n numeric:  {numeric:?}"
    );
}
