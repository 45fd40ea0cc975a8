//! Safeguarded scalar root finding for strictly increasing functions.
//!
//! Used wherever an implicit pointwise equation has to be inverted: the
//! resolvent equation behind the regularized potential, and test oracles for
//! single-cell implicit steps. Newton steps are taken when they stay inside
//! the current bracket and make progress; otherwise the method falls back to
//! bisection, so convergence never depends on a good initial guess.

/// Find the root of a strictly increasing `f` inside `[lo, hi]`.
///
/// `df` is the derivative. Requires `f(lo) <= 0 <= f(hi)`; if `f` has no sign
/// change on the bracket the nearer endpoint is returned (the root lies
/// outside the representable bracket, which callers treat as saturation).
/// Iterates until the bracket or the Newton step is below `tol`.
pub fn solve_increasing(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> f64 {
    debug_assert!(lo <= hi);
    let flo = f(lo);
    let fhi = f(hi);
    if flo >= 0.0 {
        return lo;
    }
    if fhi <= 0.0 {
        return hi;
    }
    // Start from the midpoint; Newton refines from wherever the bracket is.
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = df(x);
        let newton = x - fx / d;
        // Accept the Newton point only if it lands strictly inside the
        // bracket; otherwise bisect. Either way the bracket shrinks.
        x = if d.is_finite() && d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= tol || (x - newton).abs() <= tol && fx.abs() <= tol * d.abs() {
            return x;
        }
    }
    x
}
