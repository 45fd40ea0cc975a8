//! The free energy, its components, and the discrete dissipation budget.
//!
//! The functional driving the model is
//!
//! ```text
//! F(phi, sigma) = int (eps/2)|grad phi|^2 + (1/eps) F(phi)          (Ginzburg-Landau)
//!               + int sigma (ln sigma - 1) + chi sigma (1 - phi)    (mixing)
//! ```
//!
//! with `F = F1 - lambda r^2/2`. Along solutions the energy estimate bounds
//! the decrease rate by two nonnegative dissipation channels,
//!
//! ```text
//! d/dt F + int m |grad mu|^2 + int sigma n |grad(ln sigma + chi (1 - phi))|^2
//!        <= source budget,
//! ```
//!
//! and the scheme is built so a discrete version of this survives: with
//! sources off the energy sequence is non-increasing; with sources on the
//! overshoot is bounded by a calibrated multiple of the state scale. This
//! module evaluates the pieces; [`crate::diagnostics`] turns them into
//! per-step records.

use crate::coefficients::ModelParams;
use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy, kahan_sum};
use crate::potentials::{PotentialKind, PotentialSpec};
use crate::stepper::{mobility_faces, State};
use crate::truncation::TruncationOp;

/// The free energy split into its two physical parts
/// (`total = ginzburg_landau + mixing` exactly, by construction).
#[derive(Clone, Copy, Debug)]
pub struct EnergyBreakdown {
    pub total: f64,
    /// `int (eps/2)|grad phi|^2 + (1/eps) F(phi)`.
    pub ginzburg_landau: f64,
    /// `int sigma(ln sigma - 1) + chi sigma (1 - phi)`.
    pub mixing: f64,
}

/// `sigma (ln sigma - 1)` with the continuous-extension convention `0 at 0`;
/// tiny negatives (within solver rounding) clamp, real negatives error.
fn entropy(sigma: f64) -> Result<f64> {
    if sigma < -1e-14 {
        return Err(Error::NegativeSigma { value: sigma, context: "energy entropy term" });
    }
    if sigma <= 0.0 {
        Ok(0.0)
    } else {
        Ok(sigma * (sigma.ln() - 1.0))
    }
}

/// Evaluate the free energy of a state.
///
/// Errors propagate from the potential (`DomainViolation` if a singular kind
/// sees `|phi| >= 1`) and from negative nutrient values.
pub fn free_energy(
    state: &State,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<EnergyBreakdown> {
    state.phi.assert_same_grid(&state.sigma, "free_energy")?;
    let vol = state.phi.grid.cell_volume();

    let grad_part = 0.5 * params.eps * dirichlet_energy(&state.phi);
    let pot: Result<Vec<f64>> = state.phi.values.iter().map(|&r| spec.f_total(r)).collect();
    let gl = grad_part + kahan_sum(pot?.into_iter()) * vol / params.eps;

    let mix_cell = |phi: f64, sigma: f64| -> Result<f64> {
        Ok(entropy(sigma)? + params.chi * sigma.max(0.0) * (1.0 - phi))
    };
    let mix: Result<Vec<f64>> = state
        .phi
        .values
        .iter()
        .zip(&state.sigma.values)
        .map(|(&p, &s)| mix_cell(p, s))
        .collect();
    let mixing = kahan_sum(mix?.into_iter()) * vol;

    Ok(EnergyBreakdown { total: gl + mixing, ginzburg_landau: gl, mixing })
}

/// Free energy of the regularized scheme at level `n`: the potential `F_n`,
/// the truncated entropy `L_n`, and the truncated coupling
/// `chi T_n(sigma) (1 - phi)`.
///
/// For a singular potential kind this coincides with [`free_energy`] (the
/// formal `n = infinity` member); for `Regularized { n, .. }` the level is
/// taken from the kind, keeping the energy consistent with the stepper that
/// produced the trajectory.
pub fn free_energy_regularized(
    state: &State,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<EnergyBreakdown> {
    let n = match spec.kind {
        PotentialKind::Singular(_) => return free_energy(state, spec, params),
        PotentialKind::Regularized { n, .. } => n,
    };
    state.phi.assert_same_grid(&state.sigma, "free_energy_regularized")?;
    let op = TruncationOp::new(n)?;
    let vol = state.phi.grid.cell_volume();

    let grad_part = 0.5 * params.eps * dirichlet_energy(&state.phi);
    let pot: Result<Vec<f64>> = state.phi.values.iter().map(|&r| spec.f_total(r)).collect();
    let gl = grad_part + kahan_sum(pot?.into_iter()) * vol / params.eps;

    let mix: Result<Vec<f64>> = state
        .phi
        .values
        .iter()
        .zip(&state.sigma.values)
        .map(|(&p, &s)| {
            Ok(op.eval_ln(s)? + params.chi * op.apply_t(s.max(0.0)) * (1.0 - p))
        })
        .collect();
    let mixing = kahan_sum(mix?.into_iter()) * vol;

    Ok(EnergyBreakdown { total: gl + mixing, ginzburg_landau: gl, mixing })
}

/// Coercivity constant for the confined range: whenever `-1 <= phi <= 1`,
/// `sigma >= 0`, and `eps = 1`,
///
/// ```text
/// total + coercivity_constant >= 1/2 ||phi||_V^2 + 1/2 ||sigma ln sigma||_1 .
/// ```
///
/// Derivation, per unit volume: the coupling `chi sigma (1 - phi)` is
/// nonnegative on this range and is dropped; `F1 >= 0` leaves
/// `phi^2/2 - F(phi) <= (1 + lambda)/2`; and
/// `inf_{s>=0} [s(ln s - 1) - |s ln s|/2] = -e/2 >= -11/8`.
pub fn coercivity_constant(spec: &PotentialSpec, volume: f64) -> f64 {
    volume * (0.5 * (1.0 + spec.lambda) + 11.0 / 8.0)
}

/// Phase-channel dissipation of one accepted step:
/// `int m(phi_prev, sigma_prev) |grad mu_next|^2`, with the mobility sampled
/// to faces exactly as the flux assembly does (lagged, arithmetic mean).
pub fn dissipation_phi(prev: &State, next: &State, params: &ModelParams) -> f64 {
    let g = next.mu.grid;
    let mob = mobility_faces(&prev.phi, &prev.sigma, params.mob_m);
    let grad = crate::grid::grad_faces(&next.mu);
    let vol = g.cell_volume();
    let sx = kahan_sum(mob.x.iter().zip(&grad.x).map(|(&m, &d)| m * d * d));
    let sy = kahan_sum(mob.y.iter().zip(&grad.y).map(|(&m, &d)| m * d * d));
    (sx + sy) * vol
}

/// Cells with nutrient below this floor contribute no cross-channel
/// dissipation: the weight `sigma n` degenerates linearly there, and the
/// guarded evaluation is consistent with that limit.
const SIGMA_FLOOR: f64 = 1e-300;

/// Nutrient-channel dissipation of one accepted step:
/// `int sigma n |grad(ln sigma + chi(1 - phi))|^2`, evaluated at faces with
/// a harmonic average of the weight `sigma n` (so a vanishing cell silences
/// its faces) and differences of the potential `ln sigma + chi (1 - phi)`
/// taken from the `next` state; the mobility is lagged at `prev`.
pub fn dissipation_sigma(prev: &State, next: &State, params: &ModelParams) -> f64 {
    let g = next.sigma.grid;
    let vol = g.cell_volume();
    let weight = |i: usize, j: usize| -> f64 {
        let s = next.sigma.values[g.idx(i, j)];
        if s < SIGMA_FLOOR {
            0.0
        } else {
            s * params
                .mob_n
                .eval(prev.phi.values[g.idx(i, j)], prev.sigma.values[g.idx(i, j)])
        }
    };
    let potential = |i: usize, j: usize| -> f64 {
        let s = next.sigma.values[g.idx(i, j)].max(SIGMA_FLOOR);
        s.ln() + params.chi * (1.0 - next.phi.values[g.idx(i, j)])
    };
    let harm = |a: f64, b: f64| if a <= 0.0 || b <= 0.0 { 0.0 } else { 2.0 * a * b / (a + b) };

    let mut terms = Vec::with_capacity(2 * g.n_cells());
    for j in 0..g.ny {
        for i in 1..g.nx {
            let w = harm(weight(i - 1, j), weight(i, j));
            if w > 0.0 {
                let dg = (potential(i, j) - potential(i - 1, j)) / g.hx;
                terms.push(w * dg * dg);
            }
        }
    }
    if g.ny > 1 {
        for j in 1..g.ny {
            for i in 0..g.nx {
                let w = harm(weight(i, j - 1), weight(i, j));
                if w > 0.0 {
                    let dg = (potential(i, j) - potential(i, j - 1)) / g.hy;
                    terms.push(w * dg * dg);
                }
            }
        }
    }
    kahan_sum(terms.into_iter()) * vol
}

/// Raw left-hand side of the discrete energy law for one step:
///
/// ```text
/// [F(next) - F(prev)] / dt + D_phi + D_sigma .
/// ```
///
/// Nonpositive means the step dissipated at least as much as the energy
/// dropped — the clean inequality that holds (up to solver tolerance) when
/// sources are off.
pub fn dissipation_lhs(
    prev: &State,
    next: &State,
    dt: f64,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<f64> {
    let e0 = free_energy(prev, spec, params)?;
    let e1 = free_energy(next, spec, params)?;
    Ok((e1.total - e0.total) / dt
        + dissipation_phi(prev, next, params)
        + dissipation_sigma(prev, next, params))
}

/// Calibrated multiplier of the admissible source budget. Fit once on the
/// coarse full-model scenario in `tests::budget_scenario` (the measured
/// maximum of `dissipation_lhs / budget_scale` over 200 steps was -0.099;
/// see `tests::budget_calibration_run` for the procedure) and frozen at a
/// unit budget with that headroom. The residual check is a regression
/// sentinel for the energy estimate's *structure* (sign and scaling), not a
/// theorem about this constant.
pub const SOURCE_BUDGET_C: f64 = 1.0;

/// Scale of the admissible source budget for a step leaving `prev`:
/// `1 + |F(prev)| + int sigma + int phi^2`, the quantities the growth
/// estimate is allowed to feed on.
pub fn budget_scale(prev: &State, spec: &PotentialSpec, params: &ModelParams) -> Result<f64> {
    let e = free_energy(prev, spec, params)?;
    let vol = prev.phi.grid.cell_volume();
    let mass_sigma = kahan_sum(prev.sigma.values.iter().copied()) * vol;
    let phi_sq = kahan_sum(prev.phi.values.iter().map(|&p| p * p)) * vol;
    Ok(1.0 + e.total.abs() + mass_sigma + phi_sq)
}

/// Signed violation of the budgeted discrete energy law:
/// [`dissipation_lhs`] minus `SOURCE_BUDGET_C * budget_scale(prev)`.
/// Nonpositive means the step respected the budgeted estimate.
pub fn dissipation_residual(
    prev: &State,
    next: &State,
    dt: f64,
    spec: &PotentialSpec,
    params: &ModelParams,
) -> Result<f64> {
    Ok(dissipation_lhs(prev, next, dt, spec, params)?
        - SOURCE_BUDGET_C * budget_scale(prev, spec, params)?)
}
