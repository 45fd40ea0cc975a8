//! Truncation operators for the regularized scheme: the C^{1,1} cutoff
//! `T_n`, its inverse `gamma_n`, and the truncated entropy `L_n`.
//!
//! ```text
//! T_n(r) = r                      for r <= n
//!          n + 1 - exp(-(r - n))  for r > n      (strictly increasing, concave,
//!                                                 bounded by n+1, slope in (0,1])
//! gamma_n = T_n^{-1}  (defined on s < n+1; blows up logarithmically at n+1)
//! L_n(sigma) = integral_0^sigma T_n'(r) ln r dr
//!            = sigma (ln sigma - 1)                        for sigma <= n
//! ```
//!
//! Above the cutoff `L_n` has the exact antiderivative
//!
//! ```text
//! L_n(sigma) = n (ln n - 1) + J(n) - exp(-(sigma - n)) J(sigma),
//! J(x) = ln x + e^x E1(x),
//! ```
//!
//! obtained by integrating `e^{-(r-n)} ln r` by parts (`E1` is the
//! exponential integral). `e^x E1(x)` is evaluated by a continued fraction,
//! which converges fast for `x >= 1` — and `n >= 1` guarantees every argument
//! is in that range. This keeps `L_n` exact to rounding instead of carrying a
//! quadrature error through the energy diagnostics; the quadrature appears
//! only in the test suite as an independent check.

use crate::error::{Error, Result};

/// Truncation level `n >= 1`. Cheap to copy; all methods are pure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruncationOp {
    n: u32,
}

impl TruncationOp {
    pub fn new(n: u32) -> Result<TruncationOp> {
        if n == 0 {
            return Err(Error::InvalidGrid {
                context: "truncation level must be a positive integer".into(),
            });
        }
        Ok(TruncationOp { n })
    }

    pub fn level(&self) -> u32 {
        self.n
    }

    fn nf(&self) -> f64 {
        f64::from(self.n)
    }

    /// `T_n(r)`: identity below the level, saturating toward `n + 1` above it.
    pub fn apply_t(&self, r: f64) -> f64 {
        let n = self.nf();
        if r <= n {
            r
        } else {
            n + 1.0 - (-(r - n)).exp()
        }
    }

    /// `T_n'(r)`, in (0, 1] everywhere (1 below the level).
    pub fn t_prime(&self, r: f64) -> f64 {
        let n = self.nf();
        if r <= n {
            1.0
        } else {
            (-(r - n)).exp()
        }
    }

    /// `gamma_n(s) = T_n^{-1}(s)`, defined for `s < n + 1`.
    pub fn apply_gamma(&self, s: f64) -> Result<f64> {
        let n = self.nf();
        if s <= n {
            Ok(s)
        } else if s < n + 1.0 {
            // Invert n + 1 - exp(-(r - n)) = s.
            Ok(n - (n + 1.0 - s).ln())
        } else {
            Err(Error::RangeViolation { value: s, limit: n + 1.0 })
        }
    }

    /// Truncated entropy `L_n(sigma) = integral_0^sigma T_n'(r) ln r dr`.
    ///
    /// Exactly `sigma (ln sigma - 1)` below the level (with the continuous
    /// extension `L_n(0) = 0`) and bounded above it; in particular
    /// `L_n(sigma) >= n (ln n - 1)` for `sigma > n`.
    pub fn eval_ln(&self, sigma: f64) -> Result<f64> {
        if sigma < -1e-14 {
            return Err(Error::NegativeSigma { value: sigma, context: "eval_ln" });
        }
        let n = self.nf();
        if sigma <= 0.0 {
            Ok(0.0)
        } else if sigma <= n {
            Ok(sigma * (sigma.ln() - 1.0))
        } else {
            let j = |x: f64| x.ln() + expint_e1_scaled(x);
            Ok(n * (n.ln() - 1.0) + j(n) - (-(sigma - n)).exp() * j(sigma))
        }
    }

    /// `L_n'(sigma) = T_n'(sigma) ln sigma` — the truncated chemical
    /// potential of the entropy part.
    pub fn ln_prime(&self, sigma: f64) -> f64 {
        self.t_prime(sigma) * sigma.ln()
    }
}

/// Scaled exponential integral `e^x E1(x)` for `x >= 1`, by the modified
/// Lentz evaluation of the continued fraction
/// `E1(x) = e^{-x} / (x + 1 - 1/(x + 3 - 4/(x + 5 - 9/(x + 7 - ...))))`.
/// Relative accuracy is near machine precision on this range.
fn expint_e1_scaled(x: f64) -> f64 {
    debug_assert!(x >= 1.0);
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..200 {
        let a = -(i as f64) * (i as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let delta = c * d;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}
