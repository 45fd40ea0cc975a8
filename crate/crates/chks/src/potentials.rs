//! Configuration potentials: the singular convex part `F1`, the concave
//! quadratic `F2(r) = -lambda r^2 / 2`, and the smooth regularized family
//! used by the approximation mode.
//!
//! Two singular kinds are built in, both normalized so `F1(0) = F1'(0) = 0`:
//!
//! ```text
//! FloryHuggins:  F1(r) = (1+r) ln(1+r) + (1-r) ln(1-r)        on [-1, 1]
//! NegLog:        F1(r) = -ln(1 - r^2)                          on (-1, 1)
//! ```
//!
//! The regularized family of order `n` replaces `F1'` by its Yosida
//! approximation of parameter `1/n` plus the growth floor
//! `n^3 (|r|-1)_+ sign r`, which extends the derivative to all of `R` while
//! keeping it monotone; the floor forces any excursion of the phase variable
//! beyond `[-1, 1]` to pay an `O(n^3)` penalty, which is what drives the
//! excursions to zero as `n` grows. The Yosida value is obtained from the
//! resolvent equation `s + F1'(s)/n = r` (solved to 1e-12 by safeguarded
//! Newton/bisection); the primitive `F_n` then has the closed Moreau form
//! `F1(s) + n (r-s)^2 / 2` plus the floor's antiderivative, so no quadrature
//! is needed at run time.

use crate::error::{Error, Result};
use crate::scalar::solve_increasing;

/// Singular convex parts with domain (-1, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingularKind {
    FloryHuggins,
    NegLog,
}

impl SingularKind {
    // Closed forms, assuming |r| < 1 (callers check).
    fn f1(self, r: f64) -> f64 {
        match self {
            SingularKind::FloryHuggins => {
                // (1+r)ln(1+r) + (1-r)ln(1-r); each factor vanishes with its log.
                let a = 1.0 + r;
                let b = 1.0 - r;
                let ta = if a > 0.0 { a * a.ln() } else { 0.0 };
                let tb = if b > 0.0 { b * b.ln() } else { 0.0 };
                ta + tb
            }
            SingularKind::NegLog => -(1.0 - r * r).ln(),
        }
    }

    fn f1_prime(self, r: f64) -> f64 {
        match self {
            SingularKind::FloryHuggins => ((1.0 + r) / (1.0 - r)).ln(),
            SingularKind::NegLog => 2.0 * r / (1.0 - r * r),
        }
    }

    fn f1_second(self, r: f64) -> f64 {
        match self {
            SingularKind::FloryHuggins => 2.0 / (1.0 - r * r),
            SingularKind::NegLog => {
                let d = 1.0 - r * r;
                (2.0 + 2.0 * r * r) / (d * d)
            }
        }
    }
}

/// Potential kind: a singular potential used directly, or its regularized
/// family member of order `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialKind {
    Singular(SingularKind),
    Regularized { base: SingularKind, n: u32 },
}

/// Full potential specification `F = F1 + F2`, `F2(r) = -lambda r^2/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub lambda: f64,
}

/// Resolvent bracket end: the closest representable points to the domain
/// boundary where the closed forms stay finite.
const BRACKET: f64 = 1.0 - 1e-15;

/// Solve `s + F1'(s)/n = r` for the given base kind.
fn resolvent(base: SingularKind, n: f64, r: f64) -> f64 {
    solve_increasing(
        |s| s + base.f1_prime(s) / n - r,
        |s| 1.0 + base.f1_second(s) / n,
        -BRACKET,
        BRACKET,
        1e-12,
    )
}

/// Yosida approximation of `F1'` at parameter `1/n`, plus the growth floor —
/// the derivative of the regularized family member of order `n`.
pub fn fn_prime(base: SingularKind, n: u32, r: f64) -> f64 {
    let nf = n as f64;
    let s = resolvent(base, nf, r);
    let yosida = nf * (r - s);
    let excess = r.abs() - 1.0;
    let floor = if excess > 0.0 { nf.powi(3) * excess * r.signum() } else { 0.0 };
    yosida + floor
}

/// Primitive of `fn_prime` with `F_n(0) = 0`: Moreau envelope plus the
/// floor's quadratic ramp.
pub fn fn_value(base: SingularKind, n: u32, r: f64) -> f64 {
    let nf = n as f64;
    let s = resolvent(base, nf, r);
    let moreau = base.f1(s) + 0.5 * nf * (r - s) * (r - s);
    let excess = (r.abs() - 1.0).max(0.0);
    moreau + 0.5 * nf.powi(3) * excess * excess
}

/// Second derivative of the regularized family member (the Yosida derivative
/// `n F1''(s) / (n + F1''(s))`, plus `n^3` beyond the unit interval).
pub fn fn_second(base: SingularKind, n: u32, r: f64) -> f64 {
    let nf = n as f64;
    let s = resolvent(base, nf, r);
    let f2 = base.f1_second(s);
    let yosida = nf * f2 / (nf + f2);
    if r.abs() > 1.0 {
        yosida + nf.powi(3)
    } else {
        yosida
    }
}

impl PotentialSpec {
    pub fn flory_huggins(lambda: f64) -> Self {
        PotentialSpec { kind: PotentialKind::Singular(SingularKind::FloryHuggins), lambda }
    }

    pub fn neg_log(lambda: f64) -> Self {
        PotentialSpec { kind: PotentialKind::Singular(SingularKind::NegLog), lambda }
    }

    pub fn regularized(base: SingularKind, n: u32, lambda: f64) -> Self {
        PotentialSpec { kind: PotentialKind::Regularized { base, n }, lambda }
    }

    /// True for kinds whose derivative blows up at the domain boundary, i.e.
    /// those requiring the interior-point safeguard in the phase solver.
    pub fn is_singular(&self) -> bool {
        matches!(self.kind, PotentialKind::Singular(_))
    }

    /// The singular potential the regularized family approximates (the kind
    /// itself when it is already singular).
    pub fn base_kind(&self) -> SingularKind {
        match self.kind {
            PotentialKind::Singular(k) => k,
            PotentialKind::Regularized { base, .. } => base,
        }
    }

    fn check_domain(&self, r: f64) -> Result<()> {
        if self.is_singular() && r.abs() >= 1.0 {
            return Err(Error::DomainViolation { value: r });
        }
        Ok(())
    }

    /// Convex part `F1(r)` (the regularized `F_n(r)` for the family kind).
    pub fn f1(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(match self.kind {
            PotentialKind::Singular(k) => k.f1(r),
            PotentialKind::Regularized { base, n } => fn_value(base, n, r),
        })
    }

    /// `F1'(r)` — the monotone part of `F' = F1' - lambda r`.
    pub fn f1_prime(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(match self.kind {
            PotentialKind::Singular(k) => k.f1_prime(r),
            PotentialKind::Regularized { base, n } => fn_prime(base, n, r),
        })
    }

    /// `F1''(r)` — the Newton curvature of the implicit part.
    pub fn f1_second(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(match self.kind {
            PotentialKind::Singular(k) => k.f1_second(r),
            PotentialKind::Regularized { base, n } => fn_second(base, n, r),
        })
    }

    /// Full potential `F(r) = F1(r) - lambda r^2 / 2`.
    pub fn f_total(&self, r: f64) -> Result<f64> {
        Ok(self.f1(r)? - 0.5 * self.lambda * r * r)
    }
}
