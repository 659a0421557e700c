//! Safeguarded Newton iteration for increasing scalar functions.

use crate::error::{Error, Result};

/// Finds the root of an increasing function on the bracket `[lo, hi]`.
///
/// `f` returns the value and the derivative. The bracket must satisfy
/// `f(lo) <= 0 <= f(hi)`. Newton steps that leave the current bracket are
/// replaced by bisection, so the iteration always converges; it stops when
/// the step or the bracket is below `tol`.
pub fn newton_bisect<F>(f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    if !(lo <= hi) {
        return Err(Error::RootFinding(format!("empty bracket [{lo}, {hi}]")));
    }
    let (flo, _) = f(lo);
    let (fhi, _) = f(hi);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::RootFinding(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {flo}, f(hi) = {fhi}"
        )));
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step <= tol || hi - lo <= tol {
            return Ok(x);
        }
    }
    Err(Error::RootFinding(format!(
        "no convergence after {max_iter} iterations, bracket [{lo}, {hi}]"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_cube_root() {
        let r = newton_bisect(|x| (x * x * x - 2.0, 3.0 * x * x), 0.0, 2.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn survives_zero_derivative() {
        // Newton from the midpoint of [-1, 1] divides by zero.
        let r = newton_bisect(|x| (x * x * x - 0.001, 3.0 * x * x), -1.0, 1.0, 1e-14, 200).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_bracket() {
        assert!(newton_bisect(|x| (x - 5.0, 1.0), 0.0, 1.0, 1e-12, 50).is_err());
    }
}
