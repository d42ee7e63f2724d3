//! Bracketed scalar root finding.

use crate::real::Real;

/// The supplied interval does not bracket a sign change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoBracket;

impl std::fmt::Display for NoBracket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "interval endpoints have the same sign")
    }
}

impl std::error::Error for NoBracket {}

/// Bisection on `[lo, hi]`, requiring `f(lo)` and `f(hi)` to have opposite
/// signs (either may be zero).
///
/// Halves until the interval is narrower than `tol`; with `tol = 0` it keeps
/// going until the midpoint collides with an endpoint, i.e. the
/// floating-point fixpoint. Robust rather than fast; the force-balance and
/// tuning problems in this crate all have guaranteed brackets and are cheap
/// to evaluate.
pub fn bisect<F, G>(mut lo: F, mut hi: F, tol: F, max_iter: usize, f: G) -> Result<F, NoBracket>
where
    F: Real,
    G: Fn(F) -> F,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == F::zero() {
        return Ok(lo);
    }
    if fhi == F::zero() {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(NoBracket);
    }

    for _ in 0..max_iter {
        let mid = (lo + hi) / F::of(2.0);
        if mid == lo || mid == hi {
            break;
        }
        let fmid = f(mid);
        if fmid == F::zero() {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if tol > F::zero() && hi - lo < tol {
            break;
        }
    }
    Ok((lo + hi) / F::of(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt2() {
        let root = bisect(0.0_f64, 2.0, 0.0, 200, |x| x * x - 2.0).unwrap();
        assert!((root - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_bracket() {
        assert_eq!(bisect(1.0_f64, 2.0, 0.0, 100, |x| x * x), Err(NoBracket));
    }

    #[test]
    fn works_in_f32() {
        let root = bisect(0.0_f32, 2.0, 0.0, 200, |x| x * x - 2.0).unwrap();
        assert!((root - 2.0_f32.sqrt()).abs() < 1e-6);
    }
}
