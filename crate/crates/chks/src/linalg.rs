//! Matrix-free Krylov solvers.
//!
//! Both solvers work on raw slices through operator closures, so callers pick
//! the discretization and the preconditioner. Iteration order and reductions
//! are fixed and sequential: a given system solves to bitwise-identical
//! results on every run, which the golden-file output tests rely on.

use crate::error::{Error, Result};
use crate::grid::kahan_sum;

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Preconditioned conjugate gradients for symmetric positive (semi)definite
/// operators. `apply` computes `A x`, `precond` computes `M^{-1} r`.
/// Converges when `||r|| <= tol * ||b||`; a zero right-hand side returns the
/// zero solution immediately.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rnorm = bnorm;
    for iter in 0..max_iter {
        if rnorm <= tol * bnorm {
            return Ok((x, SolveStats { iterations: iter, relative_residual: rnorm / bnorm }));
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // Indefinite or fully converged direction; report honestly.
            return Err(Error::LinearSolveFailure { iterations: iter, residual: rnorm / bnorm });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rnorm = dot(&r, &r).sqrt();
        precond(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    if rnorm <= tol * bnorm {
        return Ok((x, SolveStats { iterations: max_iter, relative_residual: rnorm / bnorm }));
    }
    Err(Error::LinearSolveFailure { iterations: max_iter, residual: rnorm / bnorm })
}

/// Preconditioned BiCGStab for nonsymmetric systems (used by the implicit
/// weighting of the upwind advection term, whose matrix is an M-matrix but
/// not symmetric). Right preconditioning: solves `A M^{-1} y = b, x = M^{-1} y`
/// formulated in the usual two half-step recurrence.
pub fn bicgstab(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rnorm = bnorm;
    for iter in 0..max_iter {
        if rnorm <= tol * bnorm {
            return Ok((x, SolveStats { iterations: iter, relative_residual: rnorm / bnorm }));
        }
        let rho_next = dot(&r0, &r);
        if rho_next == 0.0 {
            return Err(Error::LinearSolveFailure { iterations: iter, residual: rnorm / bnorm });
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        precond(&p, &mut phat);
        apply(&phat, &mut v);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(rk, vk)| rk - alpha * vk).collect();
        let snorm = dot(&s, &s).sqrt();
        if snorm <= tol * bnorm {
            for k in 0..n {
                x[k] += alpha * phat[k];
            }
            return Ok((x, SolveStats { iterations: iter + 1, relative_residual: snorm / bnorm }));
        }
        precond(&s, &mut shat);
        apply(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::LinearSolveFailure { iterations: iter, residual: snorm / bnorm });
        }
        omega = dot(&t, &s) / tt;
        for k in 0..n {
            x[k] += alpha * phat[k] + omega * shat[k];
            r[k] = s[k] - omega * t[k];
        }
        rnorm = dot(&r, &r).sqrt();
    }
    if rnorm <= tol * bnorm {
        return Ok((x, SolveStats { iterations: max_iter, relative_residual: rnorm / bnorm }));
    }
    Err(Error::LinearSolveFailure { iterations: max_iter, residual: rnorm / bnorm })
}
