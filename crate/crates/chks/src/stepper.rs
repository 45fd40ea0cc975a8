//! Semi-implicit time integration with structure-preserving inner solvers.
//!
//! One outer step advances `(phi, mu, sigma)` by `dt`:
//!
//! 1. **Phase step** — convex splitting of the fourth-order subsystem: the
//!    convex potential part `F1'` and the surface term are implicit, the
//!    concave `-lambda phi` part, the coupling `-chi sigma`, and the source
//!    are explicit, the mobility is lagged. A Newton iteration with a
//!    fraction-to-boundary safeguard keeps `|phi| < 1` strictly for the
//!    singular potentials; each linear stage is an SPD system solved by
//!    conjugate gradients with a spectral (cosine-transform) preconditioner.
//! 2. **Nutrient step** — implicit diffusion and implicit (linearized)
//!    logistic decay, explicit logistic growth and (by default) explicit
//!    first-order upwind advection by the chemotactic velocity
//!    `chi n grad phi`. The system matrix is an M-matrix and the right-hand
//!    side is kept nonnegative by a per-cell CFL restriction on the explicit
//!    advection, so the update preserves `sigma >= 0` by construction;
//!    [`advance`] halves `dt` (at most [`MAX_HALVINGS`] times) when the
//!    restriction bites.
//!
//! The mode selects which physics participate: `Full` is the complete model,
//! `Sourceless` switches off both sources (the regime with a clean energy
//! decay), `OldModel` replaces the nutrient equation by the non-conservative
//! historical variant (unit diffusion, `+ chi lap phi` coupling) that loses
//! the minimum principle — kept as a contrast experiment — and
//! `Approximation(n)` runs the regularized scheme (potential `F_n`, nutrient
//! density `T_n(sigma)`) whose solutions approach the singular model as `n`
//! grows.

use crate::coefficients::{MobilityKind, ModelParams};
use crate::dct::Spectral;
use crate::error::{Error, Result};
use crate::grid::{
    div_flux, grad_faces, kahan_sum, laplacian, mean, FaceField, Field, Grid,
};
use crate::linalg::{bicgstab, pcg};
use crate::potentials::PotentialSpec;
use crate::truncation::TruncationOp;

/// One trajectory point: the phase field, its chemical potential, and the
/// nutrient, at time `t`.
///
/// Accepted states satisfy the scheme's pointwise guarantees: `|phi| < 1`
/// at every cell for singular potentials, `sigma >= 0` (except in the
/// deliberately defective `OldModel` mode), and `mu` consistent with the
/// phase equation's algebraic relation to Newton tolerance.
#[derive(Clone, Debug)]
pub struct State {
    pub phi: Field,
    pub mu: Field,
    pub sigma: Field,
    pub t: f64,
}

/// Which physics participate in a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeMode {
    /// Complete model: sources, logistic reaction, chemotactic advection.
    Full,
    /// Both sources off (`S = 0`, `b = 0`): the energy-decay regime.
    Sourceless,
    /// Historical nutrient law `sigma_t - lap sigma + chi lap phi = b`:
    /// non-conservative coupling, no minimum principle. Kept to demonstrate
    /// the defect the conservative form repairs.
    OldModel,
    /// Regularized scheme at truncation level `n`: potential `F_n`, coupling
    /// through `T_n(sigma)`, nutrient density `T_n(sigma)`.
    Approximation(u32),
}

/// Time-step and solver controls.
#[derive(Clone, Copy, Debug)]
pub struct SchemeConfig {
    /// Outer time step (the stepper may substep below it under CFL pressure).
    pub dt: f64,
    pub mode: SchemeMode,
    /// Residual tolerance of the phase Newton iteration (sup norm of the
    /// nonlinear residual).
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative tolerance of the inner linear solves.
    pub lin_tol: f64,
    /// Weight of the implicit part of the advective (cross-diffusion) term:
    /// 0 = fully explicit upwind (default; keeps the nutrient matrix
    /// symmetric), 1 = fully implicit upwind (unconditionally stable, needs
    /// a nonsymmetric solve).
    pub theta_cross: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            dt: 1e-3,
            mode: SchemeMode::Full,
            newton_tol: 1e-11,
            newton_max_iter: 50,
            lin_tol: 1e-12,
            theta_cross: 0.0,
        }
    }
}

/// Mobility sampled to faces by arithmetic averaging of the two adjacent
/// cells. This is the weighting both the flux assembly and the dissipation
/// diagnostics use, so the measured dissipation is exactly what the scheme
/// removes. Boundary faces are zero-flux and get weight 0.
pub fn mobility_faces(phi: &Field, sigma: &Field, mob: MobilityKind) -> FaceField {
    let g = phi.grid;
    let mut f = FaceField::zeros(g);
    let cell = |i: usize, j: usize| mob.eval(phi.values[g.idx(i, j)], sigma.values[g.idx(i, j)]);
    for j in 0..g.ny {
        for i in 1..g.nx {
            let k = f.xi(i, j);
            f.x[k] = 0.5 * (cell(i - 1, j) + cell(i, j));
        }
    }
    if g.ny > 1 {
        for j in 1..g.ny {
            for i in 0..g.nx {
                let k = f.yi(i, j);
                f.y[k] = 0.5 * (cell(i, j - 1) + cell(i, j));
            }
        }
    }
    f
}

/// The chemotactic face velocity `u = chi n grad phi`, with the nutrient
/// mobility lagged (same face values as the diffusive flux) and the phase
/// gradient taken from the new phase field. Advection *up* the phase
/// gradient: the nutrient drifts toward the tumor, which is the sign the
/// mixing energy `chi sigma (1 - phi)` relaxes.
pub fn face_velocity(
    phi_next: &Field,
    phi_prev: &Field,
    sigma_prev: &Field,
    params: &ModelParams,
) -> FaceField {
    let mut u = mobility_faces(phi_prev, sigma_prev, params.mob_n);
    let gp = grad_faces(phi_next);
    for (uf, gf) in u.x.iter_mut().zip(&gp.x) {
        *uf *= params.chi * gf;
    }
    for (uf, gf) in u.y.iter_mut().zip(&gp.y) {
        *uf *= params.chi * gf;
    }
    u
}

/// Divergence of the first-order upwind advective flux `sigma u`.
fn upwind_divergence(sigma: &Field, u: &FaceField) -> Field {
    let g = sigma.grid;
    let s = |i: usize, j: usize| sigma.values[g.idx(i, j)];
    // Flux at an x-face between (i-1,j) and (i,j).
    let fx = |i: usize, j: usize| -> f64 {
        if i == 0 || i == g.nx {
            return 0.0;
        }
        let v = u.x[j * (g.nx + 1) + i];
        v.max(0.0) * s(i - 1, j) + v.min(0.0) * s(i, j)
    };
    let fy = |i: usize, j: usize| -> f64 {
        if j == 0 || j == g.ny {
            return 0.0;
        }
        let v = u.y[(j) * g.nx + i];
        v.max(0.0) * s(i, j - 1) + v.min(0.0) * s(i, j)
    };
    let mut out = Field::constant(g, 0.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let mut d = (fx(i + 1, j) - fx(i, j)) / g.hx;
            if g.ny > 1 {
                d += (fy(i, j + 1) - fy(i, j)) / g.hy;
            }
            out.values[g.idx(i, j)] = d;
        }
    }
    out
}

/// The upwind flux itself (needed by the flux-balance diagnostic).
fn upwind_flux(sigma: &Field, u: &FaceField) -> FaceField {
    let g = sigma.grid;
    let mut f = FaceField::zeros(g);
    let s = |i: usize, j: usize| sigma.values[g.idx(i, j)];
    for j in 0..g.ny {
        for i in 1..g.nx {
            let k = f.xi(i, j);
            let v = u.x[k];
            f.x[k] = v.max(0.0) * s(i - 1, j) + v.min(0.0) * s(i, j);
        }
    }
    if g.ny > 1 {
        for j in 1..g.ny {
            for i in 0..g.nx {
                let k = f.yi(i, j);
                let v = u.y[k];
                f.y[k] = v.max(0.0) * s(i, j - 1) + v.min(0.0) * s(i, j);
            }
        }
    }
    f
}

/// Per-cell advective outflow rate `sum of outgoing |u|/h` — the quantity the
/// CFL restriction bounds: the explicit upwind update keeps a nonnegative
/// coefficient on the local `sigma` iff `dt * rate <= 1`.
fn outflow_rates(u: &FaceField) -> Field {
    let g = u.grid;
    let mut out = Field::constant(g, 0.0);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let ue = u.x[j * (g.nx + 1) + i + 1];
            let uw = u.x[j * (g.nx + 1) + i];
            let mut r = (ue.max(0.0) + (-uw).max(0.0)) / g.hx;
            if g.ny > 1 {
                let vn = u.y[(j + 1) * g.nx + i];
                let vs = u.y[j * g.nx + i];
                r += (vn.max(0.0) + (-vs).max(0.0)) / g.hy;
            }
            out.values[g.idx(i, j)] = r;
        }
    }
    out
}

/// Fraction of the explicit-update CFL budget a step may use (safety margin
/// below the sharp bound `dt * rate = 1`).
const CFL_FRACTION: f64 = 0.9;

/// Maximum number of times [`advance`] may halve `dt` inside one outer step
/// before giving up with `CflExhausted`.
pub const MAX_HALVINGS: usize = 5;

/// Iteration caps for the inner linear solves.
const LIN_MAX_ITER: usize = 10_000;

/// The potential actually stepped: `Approximation(n)` swaps a singular
/// potential for its regularized family member at level `n` (an already
/// regularized spec has its level overridden by the mode's `n`).
pub fn effective_potential(spec: &PotentialSpec, mode: SchemeMode) -> PotentialSpec {
    match mode {
        SchemeMode::Approximation(n) => {
            PotentialSpec::regularized(spec.base_kind(), n, spec.lambda)
        }
        _ => *spec,
    }
}

/// The sigma field the phase equation couples to: `sigma` itself, or
/// `T_n(sigma)` in approximation mode.
fn coupled_sigma(sigma: &Field, mode: SchemeMode) -> Result<Field> {
    match mode {
        SchemeMode::Approximation(n) => {
            let op = TruncationOp::new(n)?;
            Ok(sigma.map(|s| op.apply_t(s)))
        }
        _ => Ok(sigma.clone()),
    }
}

/// The mass source `S` evaluated explicitly at the old state (zero in
/// `Sourceless` mode).
fn source_field(state: &State, params: &ModelParams, mode: SchemeMode) -> Field {
    match mode {
        SchemeMode::Sourceless => Field::constant(state.phi.grid, 0.0),
        _ => {
            let g = state.phi.grid;
            Field {
                grid: g,
                values: state
                    .phi
                    .values
                    .iter()
                    .zip(&state.sigma.values)
                    .map(|(&p, &s)| params.source_s(p, s))
                    .collect(),
            }
        }
    }
}

/// The chemical potential the scheme assigns to a new phase field:
/// `mu = -eps lap(phi) + (1/eps)(F1'(phi) - lambda phi_old) - chi sigma~`.
/// The algebraic relation, not a solve — used both inside the Newton
/// residual and to finalize `mu` after convergence, so the two always agree.
fn mu_of(
    phi: &Field,
    phi_old: &Field,
    sigma_coupled: &Field,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<Field> {
    let lap = laplacian(phi);
    let mut values = Vec::with_capacity(phi.values.len());
    for k in 0..phi.values.len() {
        let f1p = spec.f1_prime(phi.values[k])?;
        values.push(
            -params.eps * lap.values[k]
                + (f1p - spec.lambda * phi_old.values[k]) / params.eps
                - params.chi * sigma_coupled.values[k],
        );
    }
    Ok(Field { grid: phi.grid, values })
}

/// Compatible initial chemical potential for a fresh initial state.
pub fn initial_mu(
    phi0: &Field,
    sigma0: &Field,
    spec: &PotentialSpec,
    params: &ModelParams,
    mode: SchemeMode,
) -> Result<Field> {
    let eff = effective_potential(spec, mode);
    let coupled = coupled_sigma(sigma0, mode)?;
    mu_of(phi0, phi0, &coupled, &eff, params)
}

/// `-div(w grad v)` with the given face weights: the SPD mobility operator.
fn apply_weighted_lap(v: &Field, w: &FaceField) -> Field {
    let mut f = grad_faces(v);
    for (a, b) in f.x.iter_mut().zip(&w.x) {
        *a *= b;
    }
    for (a, b) in f.y.iter_mut().zip(&w.y) {
        *a *= b;
    }
    let d = div_flux(&f);
    Field { grid: v.grid, values: d.values.iter().map(|&x| -x).collect() }
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    kahan_sum(v.iter().map(|&x| x * x)).sqrt()
}

/// Smallest implicit-step residual the arithmetic can resolve: one
/// evaluation rounds at machine epsilon times the norm of the composed
/// operator `I + dt * mob * lap * (eps lap + d)`. `d_max` is the largest
/// curvature diagonal entry (already divided by `eps` where applicable).
fn residual_floor(g: Grid, dt: f64, mob_max: f64, d_max: f64, eps: f64) -> f64 {
    let mut lap_max = 4.0 / (g.hx * g.hx);
    if g.ny > 1 {
        lap_max += 4.0 / (g.hy * g.hy);
    }
    16.0 * f64::EPSILON * (1.0 + dt * mob_max * lap_max * (eps * lap_max + d_max))
}

/// Result of one phase step.
pub struct ChStep {
    pub phi: Field,
    pub mu: Field,
    pub newton_iters: usize,
}

/// One convex-splitting step of the phase subsystem. Solves
///
/// ```text
/// phi1 - dt div( m_face grad mu(phi1) ) = phi0 + dt S,
/// mu(phi1) = -eps lap phi1 + (F1'(phi1) - lambda phi0)/eps - chi sigma~,
/// ```
///
/// by damped Newton. The mean of `phi1` is pinned to
/// `mean(phi0) + dt mean(S)` (the exact discrete mass law) at every iterate,
/// the fraction-to-boundary rule keeps singular potentials strictly inside
/// `(-1, 1)`, and each Newton direction comes from conjugate gradients on the
/// symmetrized system `(C + dt C B C) delta = -C R` with `C = eps A + D/eps`
/// (`A` the negative Laplacian, `D = diag F1''`, `B` the mobility operator),
/// preconditioned in the cosine basis.
pub fn step_ch(
    state: &State,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<(Field, Field)> {
    let eff = effective_potential(spec, cfg.mode);
    let coupled = coupled_sigma(&state.sigma, cfg.mode)?;
    let source = source_field(state, params, cfg.mode);
    let out = step_ch_core(&state.phi, &state.sigma, &coupled, &source, cfg, &eff, params)?;
    Ok((out.phi, out.mu))
}

fn step_ch_core(
    phi0: &Field,
    sigma0: &Field,
    sigma_coupled: &Field,
    source: &Field,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<ChStep> {
    let g = phi0.grid;
    let n = g.n_cells();
    let dt = cfg.dt;
    let singular = spec.is_singular();
    let spectral = Spectral::for_grid(g);
    let mob = mobility_faces(phi0, sigma0, params.mob_m);
    let mob_mean = (kahan_sum(mob.x.iter().copied()) + kahan_sum(mob.y.iter().copied()))
        / (mob.x.len() + mob.y.len()) as f64;

    let target_mean = mean(phi0) + dt * mean(source);

    let residual = |phi: &Field| -> Result<Field> {
        let mu = mu_of(phi, phi0, sigma_coupled, spec, params)?;
        let bmu = apply_weighted_lap(&mu, &mob);
        let mut r = Vec::with_capacity(n);
        for k in 0..n {
            r.push(phi.values[k] - phi0.values[k] + dt * bmu.values[k] - dt * source.values[k]);
        }
        Ok(Field { grid: g, values: r })
    };

    // Initial guess: explicit half-update, pulled back from the boundary for
    // singular kinds (keep at least 10% of the old margin), then pinned to
    // the target mean. The pull-back rarely activates: the admissible source
    // points inward near the boundary because sup|h| < m.
    let mut phi = Field {
        grid: g,
        values: phi0
            .values
            .iter()
            .zip(&source.values)
            .map(|(&p, &s)| {
                let mut v = p + dt * s;
                if singular {
                    let hi = 1.0 - 0.10 * (1.0 - p);
                    let lo = -1.0 + 0.10 * (1.0 + p);
                    v = v.clamp(lo, hi);
                }
                v
            })
            .collect(),
    };
    let shift = target_mean - mean(&phi);
    for v in phi.values.iter_mut() {
        *v += shift;
    }
    if singular && phi.values.iter().any(|v| v.abs() >= 1.0) {
        // Pathological data; restart from the old field (mean off by
        // dt*mean(S), restored by the first Newton update).
        phi = phi0.clone();
    }

    let mob_max = mob.x.iter().chain(&mob.y).copied().fold(0.0, f64::max);
    let mut r = residual(&phi)?;
    let mut rnorm = l2(&r.values);
    let mut history = vec![rnorm];
    let mut iters = 0usize;

    loop {
        // Curvature diagonal of the implicit convex part.
        let mut d = Vec::with_capacity(n);
        for &p in &phi.values {
            d.push(spec.f1_second(p)? / params.eps);
        }
        let d_mean = kahan_sum(d.iter().copied()) / n as f64;
        let d_max = d.iter().copied().fold(0.0, f64::max);

        // Evaluating R rounds at machine epsilon times the operator scale,
        // so the requested tolerance is floored at that scale: below it no
        // strict decrease exists and the iteration would spin forever.
        let floor = residual_floor(g, dt, mob_max, d_max, params.eps);
        let tol = cfg.newton_tol.max(floor);
        if linf(&r.values) <= tol {
            break;
        }
        if iters >= cfg.newton_max_iter {
            return Err(Error::NewtonDivergence { iterations: iters, history });
        }
        iters += 1;

        let apply_c = |x: &[f64], out: &mut [f64]| {
            let lap = laplacian(&Field { grid: g, values: x.to_vec() });
            for k in 0..n {
                out[k] = -params.eps * lap.values[k] + d[k] * x[k];
            }
        };
        let apply_jhat = |x: &[f64], out: &mut [f64]| {
            let mut cx = vec![0.0; n];
            apply_c(x, &mut cx);
            let b = apply_weighted_lap(&Field { grid: g, values: cx.clone() }, &mob);
            let mut cb = vec![0.0; n];
            apply_c(&b.values, &mut cb);
            for k in 0..n {
                out[k] = cx[k] + dt * cb[k];
            }
        };
        // Spectral surrogate: with frozen coefficients the operator is
        // diagonal in the cosine basis with symbol
        // (eps l + dbar)(1 + dt mobbar l (eps l + dbar)).
        let precond = |x: &[f64], out: &mut [f64]| {
            spectral.solve(x, out, |l| {
                let c = params.eps * l + d_mean;
                c * (1.0 + dt * mob_mean * l * c)
            });
        };

        let mut rhs = vec![0.0; n];
        apply_c(&r.values, &mut rhs);
        for v in rhs.iter_mut() {
            *v = -*v;
        }
        let (delta, _stats) = pcg(apply_jhat, precond, &rhs, cfg.lin_tol, LIN_MAX_ITER)?;

        // Fraction-to-boundary: the margin to ±1 may shrink by at most 95%
        // in one update.
        let mut alpha = 1.0f64;
        if singular {
            for (&p, &dk) in phi.values.iter().zip(&delta) {
                if dk > 0.0 {
                    alpha = alpha.min(0.95 * (1.0 - p) / dk);
                } else if dk < 0.0 {
                    alpha = alpha.min(0.95 * (1.0 + p) / (-dk));
                }
            }
        }

        // Backtracking on the residual norm.
        let mut accepted = None;
        while alpha >= 1e-8 {
            let mut trial = Field {
                grid: g,
                values: phi
                    .values
                    .iter()
                    .zip(&delta)
                    .map(|(&p, &dk)| p + alpha * dk)
                    .collect(),
            };
            let shift = target_mean - mean(&trial);
            for v in trial.values.iter_mut() {
                *v += shift;
            }
            if singular && trial.values.iter().any(|v| v.abs() >= 1.0) {
                alpha *= 0.5;
                continue;
            }
            let tr = residual(&trial)?;
            let tnorm = l2(&tr.values);
            if tnorm < rnorm {
                accepted = Some((trial, tr, tnorm));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, nr, nnorm)) = accepted else {
            // No descent direction left. At a residual within a couple of
            // digits of the rounding floor that is convergence, not failure.
            if linf(&r.values) <= 100.0 * floor {
                break;
            }
            history.push(rnorm);
            return Err(Error::NewtonDivergence { iterations: iters, history });
        };
        phi = next;
        r = nr;
        rnorm = nnorm;
        history.push(rnorm);
    }

    let mu = mu_of(&phi, phi0, sigma_coupled, spec, params)?;
    Ok(ChStep { phi, mu, newton_iters: iters })
}

/// Everything one nutrient step produced: the new field plus the exact face
/// fluxes and cell reactions it used, so mass accounting over any subvolume
/// can telescope without re-deriving scheme internals. `dens_*` hold the
/// conserved density (`sigma` itself, or `T_n(sigma)` in approximation
/// mode): the discrete identity is
///
/// ```text
/// dens_next - dens_prev = dt [ -div(flux) + reaction ]   (+ solver residual)
/// ```
pub struct SigmaStep {
    pub sigma: Field,
    pub flux: FaceField,
    pub reaction: Field,
    pub dens_prev: Field,
    pub dens_next: Field,
}

/// Patankar factor: the decay part of the logistic source, linearized as
/// `kappa_inf beta (sigma_old)^{p-1} sigma_new` — nonnegative diagonal, so
/// it strengthens the M-matrix instead of threatening positivity. Exact
/// backward Euler linearization for p = 2.
fn decay_diag(phi_next: &Field, sigma0: &Field, params: &ModelParams, on: bool) -> Field {
    let g = sigma0.grid;
    if !on {
        return Field::constant(g, 0.0);
    }
    Field {
        grid: g,
        values: phi_next
            .values
            .iter()
            .zip(&sigma0.values)
            .map(|(&p, &s)| params.kappa_inf * params.beta(p) * s.max(0.0).powf(params.p - 1.0))
            .collect(),
    }
}

fn growth_field(phi_next: &Field, sigma0: &Field, params: &ModelParams, on: bool) -> Field {
    let g = sigma0.grid;
    if !on {
        return Field::constant(g, 0.0);
    }
    Field {
        grid: g,
        values: phi_next
            .values
            .iter()
            .zip(&sigma0.values)
            .map(|(&p, &s)| params.kappa0 * params.beta(p) * s.max(0.0))
            .collect(),
    }
}

/// One nutrient step of the conservative law. `forcing` is an optional
/// additional source (manufactured-solution studies), evaluated per cell.
pub fn step_sigma(
    state: &State,
    phi_next: &Field,
    cfg: &SchemeConfig,
    params: &ModelParams,
) -> Result<SigmaStep> {
    let reactions_on = !matches!(cfg.mode, SchemeMode::Sourceless);
    step_sigma_core(&state.sigma, phi_next, &state.phi, cfg, params, reactions_on, None)
}

fn step_sigma_core(
    sigma0: &Field,
    phi_next: &Field,
    phi_prev: &Field,
    cfg: &SchemeConfig,
    params: &ModelParams,
    reactions_on: bool,
    forcing: Option<&Field>,
) -> Result<SigmaStep> {
    let g = sigma0.grid;
    let n = g.n_cells();
    let dt = cfg.dt;
    let theta = cfg.theta_cross;

    let nf = mobility_faces(phi_prev, sigma0, params.mob_n);
    let u = face_velocity(phi_next, phi_prev, sigma0, params);
    let decay = decay_diag(phi_next, sigma0, params, reactions_on);
    let growth = growth_field(phi_next, sigma0, params, reactions_on);

    let adv_expl = upwind_divergence(sigma0, &u);
    let mut rhs = Vec::with_capacity(n);
    for k in 0..n {
        let f = forcing.map_or(0.0, |f| f.values[k]);
        rhs.push(sigma0.values[k] + dt * (growth.values[k] - (1.0 - theta) * adv_expl.values[k] + f));
    }

    let apply = |x: &[f64], out: &mut [f64]| {
        let xf = Field { grid: g, values: x.to_vec() };
        let diff = apply_weighted_lap(&xf, &nf);
        if theta > 0.0 {
            let adv = upwind_divergence(&xf, &u);
            for k in 0..n {
                out[k] =
                    x[k] + dt * (diff.values[k] + decay.values[k] * x[k] + theta * adv.values[k]);
            }
        } else {
            for k in 0..n {
                out[k] = x[k] + dt * (diff.values[k] + decay.values[k] * x[k]);
            }
        }
    };

    let nf_mean = (kahan_sum(nf.x.iter().copied()) + kahan_sum(nf.y.iter().copied()))
        / (nf.x.len() + nf.y.len()) as f64;
    let decay_mean = kahan_sum(decay.values.iter().copied()) / n as f64;
    let spectral = Spectral::for_grid(g);
    let precond = |x: &[f64], out: &mut [f64]| {
        spectral.solve(x, out, |l| 1.0 + dt * (nf_mean * l + decay_mean));
    };

    // Positivity hinges on the solve being tighter than the -1e-12 pointwise
    // guarantee; the matrix has unit-plus diagonal, so residual and error
    // are on the same scale.
    let tol = cfg.lin_tol.min(1e-13);
    let values = if theta > 0.0 {
        bicgstab(apply, precond, &rhs, tol, LIN_MAX_ITER)?.0
    } else {
        pcg(apply, precond, &rhs, tol, LIN_MAX_ITER)?.0
    };
    let sigma = Field { grid: g, values };
    if sigma.min() < -1e-12 {
        return Err(Error::PositivityLoss { min: sigma.min(), step: 0 });
    }

    // Exact bookkeeping of what the update moved and created.
    let mut flux = grad_faces(&sigma);
    for (a, w) in flux.x.iter_mut().zip(&nf.x) {
        *a = -*a * w;
    }
    for (a, w) in flux.y.iter_mut().zip(&nf.y) {
        *a = -*a * w;
    }
    let adv0 = upwind_flux(sigma0, &u);
    for (a, b) in flux.x.iter_mut().zip(&adv0.x) {
        *a += (1.0 - theta) * b;
    }
    for (a, b) in flux.y.iter_mut().zip(&adv0.y) {
        *a += (1.0 - theta) * b;
    }
    if theta > 0.0 {
        let adv1 = upwind_flux(&sigma, &u);
        for (a, b) in flux.x.iter_mut().zip(&adv1.x) {
            *a += theta * b;
        }
        for (a, b) in flux.y.iter_mut().zip(&adv1.y) {
            *a += theta * b;
        }
    }
    let mut reaction = Vec::with_capacity(n);
    for k in 0..n {
        let f = forcing.map_or(0.0, |f| f.values[k]);
        reaction.push(growth.values[k] - decay.values[k] * sigma.values[k] + f);
    }
    Ok(SigmaStep {
        dens_prev: sigma0.clone(),
        dens_next: sigma.clone(),
        sigma,
        flux,
        reaction: Field { grid: g, values: reaction },
    })
}

/// One nutrient step of the historical non-conservative law
/// `sigma_t - lap sigma + chi lap phi = b` (unit diffusion): implicit
/// diffusion, explicit `-chi lap phi` source, same logistic split. The
/// right-hand side can go negative near steep phase interfaces — there is no
/// minimum principle, and negative output is *recorded, not raised*; that
/// contrast is this mode's purpose.
pub fn step_sigma_old_model(
    state: &State,
    phi_next: &Field,
    cfg: &SchemeConfig,
    params: &ModelParams,
) -> Result<SigmaStep> {
    let g = state.sigma.grid;
    let n = g.n_cells();
    let dt = cfg.dt;
    let sigma0 = &state.sigma;

    let decay = decay_diag(phi_next, sigma0, params, true);
    let growth = growth_field(phi_next, sigma0, params, true);
    let lap_phi = laplacian(phi_next);

    let mut rhs = Vec::with_capacity(n);
    for k in 0..n {
        rhs.push(sigma0.values[k] + dt * (growth.values[k] - params.chi * lap_phi.values[k]));
    }

    let apply = |x: &[f64], out: &mut [f64]| {
        let lap = laplacian(&Field { grid: g, values: x.to_vec() });
        for k in 0..n {
            out[k] = x[k] + dt * (-lap.values[k] + decay.values[k] * x[k]);
        }
    };
    let decay_mean = kahan_sum(decay.values.iter().copied()) / n as f64;
    let spectral = Spectral::for_grid(g);
    let precond = |x: &[f64], out: &mut [f64]| {
        spectral.solve(x, out, |l| 1.0 + dt * (l + decay_mean));
    };
    let (values, _) = pcg(apply, precond, &rhs, cfg.lin_tol.min(1e-13), LIN_MAX_ITER)?;
    let sigma = Field { grid: g, values };

    // Total flux of this formulation: -grad sigma + chi grad phi. The
    // chemotaxis part is *not* weighted by sigma — which is exactly the
    // modeling defect: flux persists where no nutrient is left.
    let mut flux = grad_faces(&sigma);
    let gp = grad_faces(phi_next);
    for (a, b) in flux.x.iter_mut().zip(&gp.x) {
        *a = -*a + params.chi * b;
    }
    for (a, b) in flux.y.iter_mut().zip(&gp.y) {
        *a = -*a + params.chi * b;
    }
    let mut reaction = Vec::with_capacity(n);
    for k in 0..n {
        reaction.push(growth.values[k] - decay.values[k] * sigma.values[k]);
    }
    Ok(SigmaStep {
        dens_prev: sigma0.clone(),
        dens_next: sigma.clone(),
        sigma,
        flux,
        reaction: Field { grid: g, values: reaction },
    })
}

/// One nutrient step of the regularized scheme: the density is `T_n(sigma)`,
///
/// ```text
/// T_n(sigma1) + dt [ -div(nf grad sigma1) + decay sigma1 ]
///     = T_n(sigma0) + dt [ growth - div(upwind flux of sigma0) + forcing ],
/// ```
///
/// solved for `sigma1` directly by damped Newton (the substitution
/// `s = T_n(sigma)` is strictly monotone, so this is the same equation the
/// transformed density form defines, without inverting `gamma_n` near its
/// asymptote). The left side is an M-function of `sigma1`, which is what
/// makes the update positivity-preserving under the weighted CFL bound.
fn step_sigma_trunc_core(
    sigma0: &Field,
    phi_next: &Field,
    phi_prev: &Field,
    cfg: &SchemeConfig,
    params: &ModelParams,
    op: TruncationOp,
    forcing: Option<&Field>,
) -> Result<SigmaStep> {
    let g = sigma0.grid;
    let n = g.n_cells();
    let dt = cfg.dt;

    let nf = mobility_faces(phi_prev, sigma0, params.mob_n);
    let u = face_velocity(phi_next, phi_prev, sigma0, params);
    let decay = decay_diag(phi_next, sigma0, params, true);
    let growth = growth_field(phi_next, sigma0, params, true);
    let adv_expl = upwind_divergence(sigma0, &u);

    let mut rhs = Vec::with_capacity(n);
    for k in 0..n {
        let f = forcing.map_or(0.0, |f| f.values[k]);
        rhs.push(
            op.apply_t(sigma0.values[k])
                + dt * (growth.values[k] - adv_expl.values[k] + f),
        );
    }

    let residual = |s: &Field| -> Field {
        let diff = apply_weighted_lap(s, &nf);
        let values = s
            .values
            .iter()
            .zip(&diff.values)
            .zip(&decay.values)
            .zip(&rhs)
            .map(|(((&sv, &dv), &cv), &rv)| op.apply_t(sv) + dt * (dv + cv * sv) - rv)
            .collect();
        Field { grid: g, values }
    };

    let spectral = Spectral::for_grid(g);
    let nf_mean = (kahan_sum(nf.x.iter().copied()) + kahan_sum(nf.y.iter().copied()))
        / (nf.x.len() + nf.y.len()) as f64;
    let decay_mean = kahan_sum(decay.values.iter().copied()) / n as f64;

    // Rounding floor of one residual evaluation (the operator here is
    // first-order in the Laplacian, so much lower than the phase step's).
    let nf_max = nf.x.iter().chain(&nf.y).copied().fold(0.0, f64::max);
    let decay_max = decay.values.iter().copied().fold(0.0, f64::max);
    let mut lap_max = 4.0 / (g.hx * g.hx);
    if g.ny > 1 {
        lap_max += 4.0 / (g.hy * g.hy);
    }
    let floor = 16.0 * f64::EPSILON * (1.0 + dt * (nf_max * lap_max + decay_max));
    let tol = cfg.newton_tol.max(floor);

    let mut sigma = sigma0.clone();
    let mut r = residual(&sigma);
    let mut rnorm = l2(&r.values);
    let mut history = vec![rnorm];
    let mut iters = 0usize;
    while linf(&r.values) > tol {
        if iters >= cfg.newton_max_iter {
            return Err(Error::NewtonDivergence { iterations: iters, history });
        }
        iters += 1;
        let tp: Vec<f64> = sigma.values.iter().map(|&s| op.t_prime(s)).collect();
        let tp_mean = kahan_sum(tp.iter().copied()) / n as f64;
        let apply = |x: &[f64], out: &mut [f64]| {
            let diff = apply_weighted_lap(&Field { grid: g, values: x.to_vec() }, &nf);
            for k in 0..n {
                out[k] = tp[k] * x[k] + dt * (diff.values[k] + decay.values[k] * x[k]);
            }
        };
        let precond = |x: &[f64], out: &mut [f64]| {
            spectral.solve(x, out, |l| tp_mean + dt * (nf_mean * l + decay_mean));
        };
        let neg_r: Vec<f64> = r.values.iter().map(|&x| -x).collect();
        let (delta, _) = pcg(apply, precond, &neg_r, cfg.lin_tol.min(1e-13), LIN_MAX_ITER)?;

        let mut alpha = 1.0f64;
        let mut accepted = None;
        while alpha >= 1e-8 {
            let trial = Field {
                grid: g,
                values: sigma
                    .values
                    .iter()
                    .zip(&delta)
                    .map(|(&s, &dk)| s + alpha * dk)
                    .collect(),
            };
            let tr = residual(&trial);
            let tnorm = l2(&tr.values);
            if tnorm < rnorm {
                accepted = Some((trial, tr, tnorm));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, nr, nnorm)) = accepted else {
            if linf(&r.values) <= 100.0 * floor {
                break;
            }
            history.push(rnorm);
            return Err(Error::NewtonDivergence { iterations: iters, history });
        };
        sigma = next;
        r = nr;
        rnorm = nnorm;
        history.push(rnorm);
    }
    if sigma.min() < -1e-12 {
        return Err(Error::PositivityLoss { min: sigma.min(), step: 0 });
    }

    let mut flux = grad_faces(&sigma);
    for (a, w) in flux.x.iter_mut().zip(&nf.x) {
        *a = -*a * w;
    }
    for (a, w) in flux.y.iter_mut().zip(&nf.y) {
        *a = -*a * w;
    }
    let adv0 = upwind_flux(sigma0, &u);
    for (a, b) in flux.x.iter_mut().zip(&adv0.x) {
        *a += b;
    }
    for (a, b) in flux.y.iter_mut().zip(&adv0.y) {
        *a += b;
    }
    let mut reaction = Vec::with_capacity(n);
    for k in 0..n {
        let f = forcing.map_or(0.0, |f| f.values[k]);
        reaction.push(growth.values[k] - decay.values[k] * sigma.values[k] + f);
    }
    Ok(SigmaStep {
        dens_prev: sigma0.map(|s| op.apply_t(s)),
        dens_next: sigma.map(|s| op.apply_t(s)),
        sigma,
        flux,
        reaction: Field { grid: g, values: reaction },
    })
}

/// One full step of the regularized scheme at the mode's truncation level.
pub fn step_approximation(
    state: &State,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<State> {
    let SchemeMode::Approximation(level) = cfg.mode else {
        return Err(Error::GridMismatch { context: "step_approximation requires Approximation mode" });
    };
    let op = TruncationOp::new(level)?;
    let (phi, mu) = step_ch(state, cfg, spec, params)?;
    let s = step_sigma_trunc_core(&state.sigma, &phi, &state.phi, cfg, params, op, None)?;
    Ok(State { phi, mu, sigma: s.sigma, t: state.t + cfg.dt })
}

/// Optional manufactured forcing, evaluated at `(x, y, t_next)` of each
/// substep and added to the phase source and the nutrient source.
#[derive(Clone, Copy, Default)]
pub struct Forcing<'a> {
    pub phi: Option<&'a dyn Fn(f64, f64, f64) -> f64>,
    pub sigma: Option<&'a dyn Fn(f64, f64, f64) -> f64>,
}

impl<'a> Forcing<'a> {
    pub const NONE: Forcing<'static> = Forcing { phi: None, sigma: None };

    fn field(f: Option<&dyn Fn(f64, f64, f64) -> f64>, grid: crate::grid::Grid, t: f64) -> Option<Field> {
        f.map(|f| Field::from_fn(grid, |x, y| f(x, y, t)))
    }
}

/// Accumulated per-outer-step solver statistics.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    /// Newton iterations summed over substeps (phase and truncated-nutrient
    /// iterations both count).
    pub newton_iters: usize,
    /// Smallest substep actually taken.
    pub dt_used: f64,
    /// Worst per-substep flux imbalance over the diagnostic subvolume.
    pub flux_imbalance: f64,
}

/// A failed step, with the index of the outer step that raised it.
#[derive(Debug)]
pub struct StepFailure {
    pub step: usize,
    pub error: Error,
}

/// What [`advance`] hands back: the last accepted state, one diagnostics
/// record per completed outer step, and the failure (if any) that stopped
/// the run early.
pub struct AdvanceResult {
    pub state: State,
    pub series: Vec<crate::diagnostics::DiagnosticsRecord>,
    pub failure: Option<StepFailure>,
}

impl AdvanceResult {
    /// Unwrap for callers that require a completed horizon.
    pub fn into_completed(self) -> Result<(State, Vec<crate::diagnostics::DiagnosticsRecord>)> {
        match self.failure {
            None => Ok((self.state, self.series)),
            Some(f) => Err(f.error),
        }
    }
}

/// Reference point of the mean-envelope diagnostic: the phase mean and the
/// clock at the start of the *run* (which may span several [`advance`]
/// calls when a driver interleaves snapshots).
#[derive(Clone, Copy, Debug)]
pub struct RunAnchor {
    pub y0: f64,
    pub t0: f64,
}

/// Advance `n_steps` outer steps, recording diagnostics after each.
///
/// Each outer step runs the phase solve, checks the advective CFL budget of
/// the nutrient update, and on violation discards the phase solve and
/// recurses into two half steps (at most [`MAX_HALVINGS`] deep). The run
/// stops at the first error; the partial series is returned alongside it.
pub fn advance(
    state: &State,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
    n_steps: usize,
) -> AdvanceResult {
    advance_forced(state, cfg, spec, params, n_steps, Forcing::NONE, None, None)
}

/// [`advance`] with manufactured forcing, an explicit diagnostic subvolume
/// (cell-index rectangle; default = left half of the domain), and an
/// explicit envelope anchor (default = this call's initial state).
#[allow(clippy::too_many_arguments)]
pub fn advance_forced(
    state: &State,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
    n_steps: usize,
    forcing: Forcing<'_>,
    subvolume: Option<crate::diagnostics::SubVolume>,
    anchor: Option<RunAnchor>,
) -> AdvanceResult {
    let sub = subvolume.unwrap_or_else(|| crate::diagnostics::SubVolume::left_half(state.phi.grid));
    let RunAnchor { y0, t0 } =
        anchor.unwrap_or(RunAnchor { y0: mean(&state.phi), t0: state.t });
    let mut cur = state.clone();
    let mut series = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        match outer_step(&cur, cfg, spec, params, forcing, &sub, 0) {
            Ok((next, stats)) => {
                match crate::diagnostics::record_step(&cur, &next, cfg, spec, params, &stats, y0, t0)
                {
                    Ok(rec) => series.push(rec),
                    Err(error) => {
                        return AdvanceResult { state: cur, series, failure: Some(StepFailure { step, error }) }
                    }
                }
                cur = next;
            }
            Err(mut error) => {
                if let Error::PositivityLoss { step: s, .. } = &mut error {
                    *s = step;
                }
                return AdvanceResult { state: cur, series, failure: Some(StepFailure { step, error }) };
            }
        }
    }
    AdvanceResult { state: cur, series, failure: None }
}

fn outer_step(
    cur: &State,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
    forcing: Forcing<'_>,
    sub: &crate::diagnostics::SubVolume,
    depth: usize,
) -> Result<(State, StepStats)> {
    let g = cur.phi.grid;
    let dt = cfg.dt;
    let t_next = cur.t + dt;

    // Phase step (with forcing folded into the source).
    let eff = effective_potential(spec, cfg.mode);
    let coupled = coupled_sigma(&cur.sigma, cfg.mode)?;
    let mut source = source_field(cur, params, cfg.mode);
    if let Some(f) = Forcing::field(forcing.phi, g, t_next) {
        for (s, fv) in source.values.iter_mut().zip(&f.values) {
            *s += fv;
        }
    }
    let ch = step_ch_core(&cur.phi, &cur.sigma, &coupled, &source, cfg, &eff, params)?;

    // Advective CFL budget of the explicit upwind part. In approximation
    // mode the budget is weighted by sigma/T_n(sigma): the conserved density
    // T_n(sigma) must stay nonnegative, and it is smaller than sigma above
    // the truncation level.
    if !matches!(cfg.mode, SchemeMode::OldModel) {
        let u = face_velocity(&ch.phi, &cur.phi, &cur.sigma, params);
        let rates = outflow_rates(&u);
        let mut ratio = 0.0f64;
        match cfg.mode {
            SchemeMode::Approximation(level) => {
                let op = TruncationOp::new(level)?;
                for (k, &rate) in rates.values.iter().enumerate() {
                    let s = cur.sigma.values[k];
                    if s > 0.0 {
                        ratio = ratio.max(dt * rate * s / op.apply_t(s));
                    }
                }
            }
            _ => {
                let expl = 1.0 - cfg.theta_cross;
                for &rate in &rates.values {
                    ratio = ratio.max(dt * expl * rate);
                }
            }
        }
        if ratio > CFL_FRACTION {
            if depth >= MAX_HALVINGS {
                return Err(Error::CflExhausted {
                    dt,
                    limit: CFL_FRACTION * dt / ratio,
                    halvings: depth,
                });
            }
            let half = SchemeConfig { dt: 0.5 * dt, ..*cfg };
            let (mid, s1) = outer_step(cur, &half, spec, params, forcing, sub, depth + 1)?;
            let (end, s2) = outer_step(&mid, &half, spec, params, forcing, sub, depth + 1)?;
            return Ok((
                end,
                StepStats {
                    newton_iters: ch.newton_iters + s1.newton_iters + s2.newton_iters,
                    dt_used: s1.dt_used.min(s2.dt_used),
                    flux_imbalance: s1.flux_imbalance.max(s2.flux_imbalance),
                },
            ));
        }
    }

    // Nutrient step.
    let f_sigma = Forcing::field(forcing.sigma, g, t_next);
    let sstep = match cfg.mode {
        SchemeMode::OldModel => step_sigma_old_model(cur, &ch.phi, cfg, params)?,
        SchemeMode::Approximation(level) => {
            let op = TruncationOp::new(level)?;
            step_sigma_trunc_core(
                &cur.sigma,
                &ch.phi,
                &cur.phi,
                cfg,
                params,
                op,
                f_sigma.as_ref(),
            )?
        }
        _ => step_sigma_core(
            &cur.sigma,
            &ch.phi,
            &cur.phi,
            cfg,
            params,
            !matches!(cfg.mode, SchemeMode::Sourceless),
            f_sigma.as_ref(),
        )?,
    };
    let imbalance = crate::diagnostics::flux_balance_step(&sstep, sub, dt)?;

    let next = State { phi: ch.phi, mu: ch.mu, sigma: sstep.sigma, t: t_next };
    Ok((
        next,
        StepStats { newton_iters: ch.newton_iters, dt_used: dt, flux_imbalance: imbalance },
    ))
}
