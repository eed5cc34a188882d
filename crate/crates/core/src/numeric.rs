//! Bisection primitives shared by the slope, implicit-function, feasibility
//! and stationary-point searches.

/// Absolute bracket width at which a bisection stops.
pub const BISECTION_WIDTH_TOL: f64 = 1e-13;
/// Residual magnitude at which a bisection stops early.
pub const BISECTION_RESIDUAL_TOL: f64 = 1e-12;
/// Hard cap on bisection iterations.
pub const BISECTION_MAX_ITER: usize = 200;

/// Finds a root of `f` on `[lo, hi]` given that `f(lo)` and `f(hi)` have
/// opposite signs (either orientation). Stops on bracket width, residual,
/// floating-point exhaustion of the bracket, or the iteration cap.
///
/// Returns the bracket end with the smaller residual when the cap is hit.
pub fn bisect<F: Fn(f64) -> f64>(mut lo: f64, mut hi: f64, f: F) -> f64 {
    let f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    let f_hi = f(hi);
    if f_hi == 0.0 {
        return hi;
    }
    debug_assert!(
        f_lo.signum() != f_hi.signum(),
        "bisect: bracket [{lo}, {hi}] does not change sign ({f_lo}, {f_hi})"
    );
    let increasing = f_hi > f_lo;
    let (mut r_lo, mut r_hi) = (f_lo.abs(), f_hi.abs());
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid.abs() < BISECTION_RESIDUAL_TOL {
            return mid;
        }
        if (f_mid < 0.0) == increasing {
            lo = mid;
            r_lo = f_mid.abs();
        } else {
            hi = mid;
            r_hi = f_mid.abs();
        }
        if hi - lo <= BISECTION_WIDTH_TOL {
            break;
        }
    }
    if r_lo <= r_hi {
        lo
    } else {
        hi
    }
}

/// Smallest point of `[lo, hi]` at which the monotone predicate `pred`
/// switches from false to true. `pred(hi)` is assumed true.
///
/// Unlike [`bisect`], the stopping width is relative, because flat pieces of a
/// piecewise-linear objective must be resolved to their left end.
pub fn bisect_leftmost<P: Fn(f64) -> bool>(mut lo: f64, mut hi: f64, pred: P) -> f64 {
    if pred(lo) {
        return lo;
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= BISECTION_WIDTH_TOL * (1.0 + hi.abs()) {
            break;
        }
    }
    hi
}

#[inline]
pub fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}
