//! Runtime certificates: per-step records of the quantities the analysis
//! guarantees, plus the twin-trajectory metrics behind the continuous-
//! dependence estimate.
//!
//! Everything here is *measured from accepted states*, never from scheme
//! internals the solver could fudge: energies are re-evaluated from the
//! fields, the mass envelope comes from the closed-form ODE bound, and the
//! subvolume flux balance telescopes the exact face fluxes the nutrient
//! update reported. A healthy run shows: non-increasing energy when sources
//! are off, `phi_mean` inside its envelope, `sigma_min >= -1e-12`,
//! `sep_delta > 0` for singular potentials, and `flux_imbalance` at solver
//! tolerance.

use crate::coefficients::ModelParams;
use crate::energy;
use crate::error::{Error, Result};
use crate::grid::{dual_norm, integral, kahan_sum, mean, norm_l2, norm_v_sq, Field, Grid};
use crate::potentials::PotentialSpec;
use crate::stepper::{
    effective_potential, mobility_faces, SchemeConfig, SchemeMode, SigmaStep, State, StepStats,
};

/// One row of the run log — the full set of tracked certificates after one
/// accepted outer step.
#[derive(Clone, Debug)]
pub struct DiagnosticsRecord {
    /// Time after the step.
    pub t: f64,
    /// Free energy of the new state (mode-consistent: the regularized
    /// functional in approximation mode; nutrient clamped at zero in the
    /// old-model contrast, which has no sign guarantee).
    pub energy_total: f64,
    pub energy_gl: f64,
    pub energy_mix: f64,
    /// Signed slack in the budgeted energy inequality (nonpositive = the
    /// step respected the budget).
    pub dissipation_residual: f64,
    pub phi_mean: f64,
    /// Closed-form envelope for the phase mean at this time.
    pub phi_mean_lo: f64,
    pub phi_mean_hi: f64,
    pub sigma_min: f64,
    pub sigma_mass: f64,
    /// Distance to the phase boundary: `1 - max|phi|`. Positive on every
    /// accepted step for singular potentials.
    pub sep_delta: f64,
    /// Relative mass-accounting defect over the diagnostic subvolume (worst
    /// substep).
    pub flux_imbalance: f64,
    /// Newton iterations spent in this outer step (all substeps).
    pub newton_iters: usize,
    /// Smallest substep actually taken (equals the outer dt when no CFL
    /// halving was needed).
    pub dt_used: f64,
}

impl DiagnosticsRecord {
    /// Column names of [`Self::csv_row`], fixed order.
    pub const CSV_HEADER: &'static str = "t,energy_total,energy_gl,energy_mix,dissipation_residual,phi_mean,phi_mean_lo,phi_mean_hi,sigma_min,sigma_mass,sep_delta,flux_imbalance,newton_iters,dt_used";

    /// One CSV row, columns exactly as in [`Self::CSV_HEADER`]. Floats use
    /// the shortest round-trip decimal form, so logs are bit-faithful.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.energy_total,
            self.energy_gl,
            self.energy_mix,
            self.dissipation_residual,
            self.phi_mean,
            self.phi_mean_lo,
            self.phi_mean_hi,
            self.sigma_min,
            self.sigma_mass,
            self.sep_delta,
            self.flux_imbalance,
            self.newton_iters,
            self.dt_used,
        )
    }
}

/// Closed-form confinement interval for the phase mean. The mean obeys
/// `y' = -m y + hbar(t)` with `|hbar| <= h_sup`, so
///
/// ```text
/// y(t) in [ y0 e^{-mt} - (h_sup/m)(1 - e^{-mt}),
///           y0 e^{-mt} + (h_sup/m)(1 - e^{-mt}) ] .
/// ```
///
/// Errors with `UndefinedEnvelope` when `m <= 0`; the conservative case
/// (`m = 0`, which validation pairs with `h = 0`) uses the constant envelope
/// `(y0, y0)` instead — the caller's branch, since no finite formula covers
/// both.
pub fn mean_envelope(y0: f64, m: f64, h_sup: f64, t: f64) -> Result<(f64, f64)> {
    if m <= 0.0 {
        return Err(Error::UndefinedEnvelope {
            context: "relaxation rate m must be positive (m = 0 keeps the mean constant)",
        });
    }
    let decay = (-m * t).exp();
    let spread = (h_sup / m) * (1.0 - decay);
    Ok((y0 * decay - spread, y0 * decay + spread))
}

/// Axis-aligned subvolume, stored as cell index ranges (`i0..i1 x j0..j1`,
/// end-exclusive) so its edges lie on faces by construction.
#[derive(Clone, Copy, Debug)]
pub struct SubVolume {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl SubVolume {
    /// Default diagnostic subvolume: the left half of the domain.
    pub fn left_half(g: Grid) -> SubVolume {
        SubVolume { i0: 0, i1: g.nx / 2, j0: 0, j1: g.ny }
    }

    /// The whole domain (flux balance then reduces to the global mass law).
    pub fn whole(g: Grid) -> SubVolume {
        SubVolume { i0: 0, i1: g.nx, j0: 0, j1: g.ny }
    }

    /// Build from physical coordinates; every edge must sit on a cell
    /// boundary (within 1e-9 of a face, relative to the spacing).
    pub fn from_coords(g: Grid, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<SubVolume> {
        let snap = |coord: &'static str, value: f64, h: f64, n: usize| -> Result<usize> {
            let k = value / h;
            let r = k.round();
            if (k - r).abs() > 1e-9 * k.abs().max(1.0) || r < 0.0 || r > n as f64 {
                return Err(Error::MisalignedSubvolume { coord, value });
            }
            Ok(r as usize)
        };
        let sv = SubVolume {
            i0: snap("x0", x0, g.hx, g.nx)?,
            i1: snap("x1", x1, g.hx, g.nx)?,
            j0: snap("y0", y0, g.hy, g.ny)?,
            j1: snap("y1", y1, g.hy, g.ny)?,
        };
        if sv.i0 >= sv.i1 || sv.j0 >= sv.j1 {
            return Err(Error::InvalidGrid { context: format!("empty subvolume {sv:?}") });
        }
        Ok(sv)
    }

    fn check(&self, g: Grid) -> Result<()> {
        if self.i1 > g.nx || self.j1 > g.ny || self.i0 >= self.i1 || self.j0 >= self.j1 {
            return Err(Error::InvalidGrid {
                context: format!("subvolume {self:?} outside {}x{} grid", g.nx, g.ny),
            });
        }
        Ok(())
    }
}

/// Mass accounting of one nutrient substep over a subvolume: the change of
/// the conserved density inside `v` must equal `dt` times (reactions inside
/// minus net outward flux through the boundary faces), because both sides
/// telescope from the same per-cell update. Returns the *relative* defect;
/// anything above solver tolerance (~1e-10) means the step's bookkeeping and
/// its algebra disagree.
pub fn flux_balance_step(step: &SigmaStep, v: &SubVolume, dt: f64) -> Result<f64> {
    let g = step.sigma.grid;
    v.check(g)?;
    let vol = g.cell_volume();

    let mut mass_terms = Vec::with_capacity((v.i1 - v.i0) * (v.j1 - v.j0));
    let mut reaction_terms = Vec::with_capacity(mass_terms.capacity());
    let mut reaction_abs = Vec::with_capacity(mass_terms.capacity());
    for j in v.j0..v.j1 {
        for i in v.i0..v.i1 {
            let k = g.idx(i, j);
            mass_terms.push(step.dens_next.values[k] - step.dens_prev.values[k]);
            reaction_terms.push(step.reaction.values[k]);
            reaction_abs.push(step.reaction.values[k].abs());
        }
    }
    let dm = kahan_sum(mass_terms.into_iter()) * vol;
    let reactions = kahan_sum(reaction_terms.into_iter()) * vol;
    let reactions_abs = kahan_sum(reaction_abs.into_iter()) * vol;

    // Net outward flux through the four edges (x-faces carry area hy,
    // y-faces carry area hx; 1D grids have hy = 1 and no y-faces).
    let mut outward_terms = Vec::new();
    let mut outward_abs = Vec::new();
    for j in v.j0..v.j1 {
        let east = step.flux.x[j * (g.nx + 1) + v.i1] * g.hy;
        let west = step.flux.x[j * (g.nx + 1) + v.i0] * g.hy;
        outward_terms.push(east - west);
        outward_abs.push(east.abs() + west.abs());
    }
    if g.ny > 1 {
        for i in v.i0..v.i1 {
            let north = step.flux.y[v.j1 * g.nx + i] * g.hx;
            let south = step.flux.y[v.j0 * g.nx + i] * g.hx;
            outward_terms.push(north - south);
            outward_abs.push(north.abs() + south.abs());
        }
    }
    let outward = kahan_sum(outward_terms.into_iter());
    let outward_abs = kahan_sum(outward_abs.into_iter());

    let defect = (dm - dt * (reactions - outward)).abs();
    let scale = dm.abs() + dt * (reactions_abs + outward_abs) + f64::MIN_POSITIVE;
    Ok(defect / scale)
}

/// The two versions of the chemotactic boundary term over a subvolume
/// boundary: the conservative model transports `chi sigma n grad phi . nu`
/// (nutrient-weighted — no nutrient, no flux), the historical model
/// transports `chi grad phi . nu` regardless of how much nutrient is there.
/// Their gap is the measurable modeling difference between the two laws.
pub fn chemotaxis_boundary_terms(
    state: &State,
    v: &SubVolume,
    params: &ModelParams,
) -> Result<(f64, f64)> {
    let g = state.phi.grid;
    v.check(g)?;
    let gp = crate::grid::grad_faces(&state.phi);
    let nf = mobility_faces(&state.phi, &state.sigma, params.mob_n);
    let sface = |ka: usize, kb: usize| 0.5 * (state.sigma.values[ka] + state.sigma.values[kb]);

    let mut weighted = Vec::new();
    let mut unweighted = Vec::new();
    let mut push = |k: usize, area: f64, sign: f64, sf: f64, grad: f64, nv: f64| {
        let _ = k;
        weighted.push(sign * params.chi * sf * nv * grad * area);
        unweighted.push(sign * params.chi * grad * area);
    };
    for j in v.j0..v.j1 {
        // East edge, outward = +x; west edge, outward = -x. Boundary faces
        // of the domain carry zero gradient and drop out on their own.
        for (i, sign) in [(v.i1, 1.0), (v.i0, -1.0)] {
            if i == 0 || i == g.nx {
                continue;
            }
            let k = j * (g.nx + 1) + i;
            let sf = sface(g.idx(i - 1, j), g.idx(i, j));
            push(k, g.hy, sign, sf, gp.x[k], nf.x[k]);
        }
    }
    if g.ny > 1 {
        for i in v.i0..v.i1 {
            for (j, sign) in [(v.j1, 1.0), (v.j0, -1.0)] {
                if j == 0 || j == g.ny {
                    continue;
                }
                let k = j * g.nx + i;
                let sf = sface(g.idx(i, j - 1), g.idx(i, j));
                push(k, g.hx, sign, sf, gp.y[k], nf.y[k]);
            }
        }
    }
    Ok((kahan_sum(weighted.into_iter()), kahan_sum(unweighted.into_iter())))
}

/// Build the per-step record from the accepted states.
///
/// `y0` and `t0` anchor the mean envelope: the phase mean and the clock at
/// the start of the enclosing run.
#[allow(clippy::too_many_arguments)]
pub fn record_step(
    prev: &State,
    next: &State,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
    stats: &StepStats,
    y0: f64,
    t0: f64,
) -> Result<DiagnosticsRecord> {
    // Mode-consistent energies. The old-model contrast can push sigma
    // negative; its energy is evaluated on the clamped field (the functional
    // is undefined below zero — that defect is the point of the mode).
    let eval = |s: &State| -> Result<energy::EnergyBreakdown> {
        match cfg.mode {
            SchemeMode::Approximation(_) => {
                energy::free_energy_regularized(s, &effective_potential(spec, cfg.mode), params)
            }
            SchemeMode::OldModel => {
                let clamped = State {
                    phi: s.phi.clone(),
                    mu: s.mu.clone(),
                    sigma: s.sigma.map(|v| v.max(0.0)),
                    t: s.t,
                };
                energy::free_energy(&clamped, spec, params)
            }
            _ => energy::free_energy(s, spec, params),
        }
    };
    let e_prev = eval(prev)?;
    let e_next = eval(next)?;

    let dt = next.t - prev.t;
    let lhs = (e_next.total - e_prev.total) / dt
        + energy::dissipation_phi(prev, next, params)
        + energy::dissipation_sigma(prev, next, params);
    let vol = prev.phi.grid.cell_volume();
    let scale = 1.0
        + e_prev.total.abs()
        + kahan_sum(prev.sigma.values.iter().map(|&s| s.max(0.0))) * vol
        + kahan_sum(prev.phi.values.iter().map(|&p| p * p)) * vol;
    let dissipation_residual = lhs - energy::SOURCE_BUDGET_C * scale;

    let phi_mean = mean(&next.phi);
    let source_free = matches!(cfg.mode, SchemeMode::Sourceless) || params.m == 0.0;
    let (phi_mean_lo, phi_mean_hi) = if source_free {
        (y0, y0)
    } else {
        mean_envelope(y0, params.m, params.sup_h(), next.t - t0)?
    };

    Ok(DiagnosticsRecord {
        t: next.t,
        energy_total: e_next.total,
        energy_gl: e_next.ginzburg_landau,
        energy_mix: e_next.mixing,
        dissipation_residual,
        phi_mean,
        phi_mean_lo,
        phi_mean_hi,
        sigma_min: next.sigma.min(),
        sigma_mass: integral(&next.sigma),
        sep_delta: 1.0 - next.phi.norm_linf(),
        flux_imbalance: stats.flux_imbalance,
        newton_iters: stats.newton_iters,
        dt_used: stats.dt_used,
    })
}

/// Both sides of the continuous-dependence estimate, measured on a pair of
/// trajectories from perturbed initial data.
///
/// The left side collects the solution-difference norms the estimate
/// controls (suprema over the sampled times, time integrals by the
/// left-endpoint rule); the right side collects the initial-data terms it
/// charges them to. Their ratio is the empirical stability constant — finite
/// and slowly varying when the estimate holds; the analysis does not pin its
/// value, so it is logged, never asserted.
#[derive(Clone, Copy, Debug)]
pub struct TwinMetrics {
    /// `sup_t || (phi1 - phi2) - mean ||_{V*}^2` (dual norm of the
    /// fluctuation).
    pub sup_phi_dual_sq: f64,
    /// `sup_t (mean(phi1 - phi2))^2`.
    pub sup_phi_mean_sq: f64,
    /// `sup_t |mean(phi1 - phi2)|`.
    pub sup_phi_mean_abs: f64,
    /// `sup_t || (sigma1 - sigma2) - mean ||_{V*}^2`.
    pub sup_sigma_dual_sq: f64,
    /// `sup_t (mean(sigma1 - sigma2))^2`.
    pub sup_sigma_mean_sq: f64,
    /// `int_0^T || phi1 - phi2 ||_{H1}^2 dt`.
    pub int_phi_v_sq: f64,
    /// `int_0^T || sigma1 - sigma2 ||_{L2}^2 dt`.
    pub int_sigma_l2_sq: f64,
    /// Initial-data charges: same five difference measures at `t = 0`.
    pub rhs_phi_dual_sq: f64,
    pub rhs_phi_mean_sq: f64,
    pub rhs_phi_mean_abs: f64,
    pub rhs_sigma_dual_sq: f64,
    pub rhs_sigma_mean_sq: f64,
}

impl TwinMetrics {
    pub fn lhs_total(&self) -> f64 {
        self.sup_phi_dual_sq
            + self.sup_phi_mean_sq
            + self.sup_phi_mean_abs
            + self.sup_sigma_dual_sq
            + self.sup_sigma_mean_sq
            + self.int_phi_v_sq
            + self.int_sigma_l2_sq
    }

    pub fn rhs_total(&self) -> f64 {
        self.rhs_phi_dual_sq
            + self.rhs_phi_mean_sq
            + self.rhs_phi_mean_abs
            + self.rhs_sigma_dual_sq
            + self.rhs_sigma_mean_sq
    }

    /// Empirical stability constant `lhs / rhs`. Identical trajectories give
    /// 0; a zero right side with a nonzero left side gives infinity.
    pub fn ratio(&self) -> f64 {
        let (l, r) = (self.lhs_total(), self.rhs_total());
        if l == 0.0 {
            0.0
        } else {
            l / r
        }
    }
}

fn diff(a: &Field, b: &Field) -> Field {
    Field {
        grid: a.grid,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
    }
}

/// The difference measures at one sampled time, the raw material for
/// [`TwinMetrics`].
#[derive(Clone, Copy, Debug)]
pub struct TwinInstant {
    pub phi_dual_sq: f64,
    pub phi_mean_sq: f64,
    pub phi_mean_abs: f64,
    pub sigma_dual_sq: f64,
    pub sigma_mean_sq: f64,
    /// `|| phi1 - phi2 ||_{H1}^2` (the time-integrated quantity).
    pub phi_v_sq: f64,
    /// `|| sigma1 - sigma2 ||_{L2}^2` (the time-integrated quantity).
    pub sigma_l2_sq: f64,
}

/// Difference measures between two states at the same time.
pub fn twin_instant(a: &State, b: &State) -> Result<TwinInstant> {
    a.phi.assert_same_grid(&b.phi, "twin_instant")?;
    let dphi = diff(&a.phi, &b.phi);
    let dsigma = diff(&a.sigma, &b.sigma);
    let phi_mean = mean(&dphi);
    let sigma_mean = mean(&dsigma);
    Ok(TwinInstant {
        phi_dual_sq: dual_norm(&dphi)?.powi(2),
        phi_mean_sq: phi_mean * phi_mean,
        phi_mean_abs: phi_mean.abs(),
        sigma_dual_sq: dual_norm(&dsigma)?.powi(2),
        sigma_mean_sq: sigma_mean * sigma_mean,
        phi_v_sq: norm_v_sq(&dphi),
        sigma_l2_sq: norm_l2(&dsigma).powi(2),
    })
}

/// Measure [`TwinMetrics`] on two sampled trajectories (equal length,
/// including the initial states; `dt` is the sampling interval).
pub fn twin_metrics(a: &[State], b: &[State], dt: f64) -> Result<TwinMetrics> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::GridMismatch {
            context: "twin trajectories must have equal, nonzero length",
        });
    }

    let mut m = TwinMetrics {
        sup_phi_dual_sq: 0.0,
        sup_phi_mean_sq: 0.0,
        sup_phi_mean_abs: 0.0,
        sup_sigma_dual_sq: 0.0,
        sup_sigma_mean_sq: 0.0,
        int_phi_v_sq: 0.0,
        int_sigma_l2_sq: 0.0,
        rhs_phi_dual_sq: 0.0,
        rhs_phi_mean_sq: 0.0,
        rhs_phi_mean_abs: 0.0,
        rhs_sigma_dual_sq: 0.0,
        rhs_sigma_mean_sq: 0.0,
    };
    let mut int_phi = Vec::with_capacity(a.len());
    let mut int_sigma = Vec::with_capacity(a.len());
    for (k, (sa, sb)) in a.iter().zip(b).enumerate() {
        let inst = twin_instant(sa, sb)?;

        m.sup_phi_dual_sq = m.sup_phi_dual_sq.max(inst.phi_dual_sq);
        m.sup_phi_mean_sq = m.sup_phi_mean_sq.max(inst.phi_mean_sq);
        m.sup_phi_mean_abs = m.sup_phi_mean_abs.max(inst.phi_mean_abs);
        m.sup_sigma_dual_sq = m.sup_sigma_dual_sq.max(inst.sigma_dual_sq);
        m.sup_sigma_mean_sq = m.sup_sigma_mean_sq.max(inst.sigma_mean_sq);

        if k + 1 < a.len() {
            int_phi.push(inst.phi_v_sq);
            int_sigma.push(inst.sigma_l2_sq);
        }
        if k == 0 {
            m.rhs_phi_dual_sq = inst.phi_dual_sq;
            m.rhs_phi_mean_sq = inst.phi_mean_sq;
            m.rhs_phi_mean_abs = inst.phi_mean_abs;
            m.rhs_sigma_dual_sq = inst.sigma_dual_sq;
            m.rhs_sigma_mean_sq = inst.sigma_mean_sq;
        }
    }
    m.int_phi_v_sq = kahan_sum(int_phi.into_iter()) * dt;
    m.int_sigma_l2_sq = kahan_sum(int_sigma.into_iter()) * dt;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::stepper::{advance, initial_mu, step_sigma, SchemeConfig, SchemeMode};
    use std::f64::consts::PI;

    #[test]
    fn envelope_matches_closed_form_oracles() {
        // t = 0 collapses to the initial mean.
        let (lo, hi) = mean_envelope(0.37, 2.0, 1.0, 0.0).unwrap();
        assert_eq!((lo, hi), (0.37, 0.37));
        // Long-time limit is +-(h_sup / m).
        let (lo, hi) = mean_envelope(0.0, 1.0, 0.5, 60.0).unwrap();
        assert!((lo + 0.5).abs() < 1e-12 && (hi - 0.5).abs() < 1e-12);
        // Mid-trajectory value: y0 = 0.9, m = 2, h_sup = 1 at t = 1:
        // hi = 0.9 e^-2 + 0.5 (1 - e^-2).
        let (_, hi) = mean_envelope(0.9, 2.0, 1.0, 1.0).unwrap();
        let want = 0.9 * (-2.0f64).exp() + 0.5 * (1.0 - (-2.0f64).exp());
        assert!((hi - want).abs() < 1e-15);
        assert!((hi - 0.5541341133).abs() < 1e-9);
        // m = 0 is the conservative case: no finite envelope formula.
        assert!(matches!(
            mean_envelope(0.1, 0.0, 0.0, 1.0),
            Err(Error::UndefinedEnvelope { .. })
        ));
    }

    #[test]
    fn subvolume_construction_and_misalignment() {
        let g = Grid::rect(8, 8, 1.0, 1.0).unwrap();
        let v = SubVolume::from_coords(g, 0.0, 0.5, 0.25, 1.0).unwrap();
        assert_eq!((v.i0, v.i1, v.j0, v.j1), (0, 4, 2, 8));
        match SubVolume::from_coords(g, 0.0, 0.3, 0.0, 1.0) {
            Err(Error::MisalignedSubvolume { coord, value }) => {
                assert_eq!(coord, "x1");
                assert!((value - 0.3).abs() < 1e-15);
            }
            other => panic!("expected misalignment, got {other:?}"),
        }
    }

    fn demo_step(g: Grid) -> (State, SigmaStep, f64) {
        let spec = PotentialSpec::flory_huggins(1.0);
        let params = ModelParams { chi: 0.7, ..ModelParams::default() };
        let cfg = SchemeConfig { dt: 1e-3, ..SchemeConfig::default() };
        let phi = Field::from_fn(g, |x, y| 0.5 * (PI * x).cos() * (PI * y).cos());
        let sigma = Field::from_fn(g, |x, y| 1.0 + 0.4 * (PI * x).cos() * (2.0 * PI * y).cos());
        let mu = initial_mu(&phi, &sigma, &spec, &params, SchemeMode::Full).unwrap();
        let st = State { phi, mu, sigma, t: 0.0 };
        let (phi1, _) = crate::stepper::step_ch(&st, &cfg, &spec, &params).unwrap();
        let step = step_sigma(&st, &phi1, &cfg, &params).unwrap();
        (st, step, cfg.dt)
    }

    #[test]
    fn flux_balance_telescopes_on_subvolumes() {
        let g = Grid::rect(16, 16, 1.0, 1.0).unwrap();
        let (_, step, dt) = demo_step(g);
        for v in [
            SubVolume::left_half(g),
            SubVolume::whole(g),
            SubVolume { i0: 3, i1: 11, j0: 2, j1: 16 },
        ] {
            let imb = flux_balance_step(&step, &v, dt).unwrap();
            assert!(imb < 1e-10, "{v:?}: {imb}");
        }
    }

    #[test]
    fn whole_domain_balance_is_the_global_mass_law() {
        let g = Grid::rect(12, 12, 1.0, 1.0).unwrap();
        let (st, step, dt) = demo_step(g);
        // Boundary fluxes vanish, so mass change = dt * total reaction.
        let dm = integral(&step.dens_next) - integral(&st.sigma);
        let want = dt * integral(&step.reaction);
        assert!((dm - want).abs() < 1e-12 * (1.0 + want.abs()), "{dm} vs {want}");
    }

    #[test]
    fn boundary_terms_weighting_shows_the_model_gap() {
        // Uniform sigma = s and unit mobility make the weighted term exactly
        // s times the unweighted one.
        let g = Grid::rect(16, 16, 1.0, 1.0).unwrap();
        let params = ModelParams { chi: 0.9, ..ModelParams::default() };
        let phi = Field::from_fn(g, |x, _| 0.6 * (PI * x).cos());
        for s in [1.0, 2.5] {
            let st = State {
                mu: Field::constant(g, 0.0),
                sigma: Field::constant(g, s),
                phi: phi.clone(),
                t: 0.0,
            };
            let v = SubVolume { i0: 2, i1: 9, j0: 3, j1: 13 };
            let (weighted, unweighted) = chemotaxis_boundary_terms(&st, &v, &params).unwrap();
            assert!((weighted - s * unweighted).abs() < 1e-12 * (1.0 + unweighted.abs()));
            assert!(unweighted.abs() > 1e-6, "test must exercise a nonzero term");
        }
    }

    #[test]
    fn twin_metrics_identical_trajectories_vanish() {
        let g = Grid::rect(8, 8, 1.0, 1.0).unwrap();
        let spec = PotentialSpec::flory_huggins(1.0);
        let params = ModelParams::default();
        let cfg = SchemeConfig::default();
        let phi = Field::from_fn(g, |x, _| 0.3 * (PI * x).cos());
        let sigma = Field::constant(g, 1.0);
        let mu = initial_mu(&phi, &sigma, &spec, &params, SchemeMode::Full).unwrap();
        let st = State { phi, mu, sigma, t: 0.0 };
        let out = advance(&st, &cfg, &spec, &params, 3);
        assert!(out.failure.is_none());
        // Re-run the same trajectory: determinism makes it bitwise equal.
        let out2 = advance(&st, &cfg, &spec, &params, 3);
        let traj: Vec<State> = vec![st.clone(), out.state.clone()];
        let traj2: Vec<State> = vec![st, out2.state];
        let m = twin_metrics(&traj, &traj2, cfg.dt).unwrap();
        assert_eq!(m.lhs_total(), 0.0);
        assert_eq!(m.ratio(), 0.0);
    }

    #[test]
    fn twin_metrics_single_mode_oracle() {
        // One-snapshot "trajectories" differing by c cos(pi x): the dual
        // norm of the fluctuation is c / (sqrt(2) pi) on the unit interval,
        // the means agree, and the time integrals cover no interval.
        let g = Grid::line(256, 1.0).unwrap();
        let c = 0.01;
        let base = Field::constant(g, 0.2);
        let pert = Field::from_fn(g, |x, _| 0.2 + c * (PI * x).cos());
        let zero = Field::constant(g, 0.0);
        let mk = |phi: Field| State {
            phi,
            mu: zero.clone(),
            sigma: Field::constant(g, 1.0),
            t: 0.0,
        };
        let m = twin_metrics(&[mk(base)], &[mk(pert)], 1.0).unwrap();
        let want = (c / (2.0f64.sqrt() * PI)).powi(2);
        assert!(
            (m.sup_phi_dual_sq - want).abs() < 1e-4 * want,
            "{} vs {want}",
            m.sup_phi_dual_sq
        );
        assert!(m.sup_phi_mean_abs < 1e-14);
        assert_eq!(m.int_phi_v_sq, 0.0);
        assert_eq!(m.int_sigma_l2_sq, 0.0);
        assert!(m.rhs_sigma_dual_sq == 0.0 && m.rhs_sigma_mean_sq == 0.0);
    }

    #[test]
    fn csv_row_has_header_arity() {
        let rec = DiagnosticsRecord {
            t: 0.5,
            energy_total: 1.0,
            energy_gl: 0.75,
            energy_mix: 0.25,
            dissipation_residual: -3.0,
            phi_mean: 0.1,
            phi_mean_lo: 0.0,
            phi_mean_hi: 0.2,
            sigma_min: 0.0,
            sigma_mass: 2.0,
            sep_delta: 0.3,
            flux_imbalance: 1e-13,
            newton_iters: 4,
            dt_used: 1e-3,
        };
        let header_cols = DiagnosticsRecord::CSV_HEADER.split(',').count();
        let row_cols = rec.csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
        assert_eq!(header_cols, 14);
    }
}
