//! The acceptance gate: one test per release criterion, names matching the
//! criterion numbers, so `cargo test --test acceptance` prints one pass/fail
//! line for each. Run with `-- --nocapture` for the measured numbers.
//!
//! Every scenario in here is constructed from public library API only; the
//! configuration-rejection criterion drives the installed binary and compares
//! against golden transcripts under `tests/golden/`.

use std::f64::consts::PI;
use std::time::Instant;

use chks::coefficients::{HSpec, ModelParams, MobilityKind};
use chks::diagnostics::twin_metrics;
use chks::energy;
use chks::grid::{dual_norm, grad_faces, laplacian, mean, norm_l2, Field, Grid};
use chks::potentials::{PotentialSpec, SingularKind};
use chks::rng::SplitMix64;
use chks::stepper::{
    advance, advance_forced, initial_mu, Forcing, SchemeConfig, SchemeMode, State,
};
use chks::DiagnosticsRecord;

// ---------------------------------------------------------------- helpers

fn tumor_seed(g: Grid, radius: f64, width: f64) -> Field {
    let (cx, cy) = (g.lx / 2.0, g.ly / 2.0);
    Field::from_fn(g, |x, y| {
        let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        0.9 * ((radius - r) / width).tanh()
    })
}

fn state_from(phi: Field, sigma: Field, spec: &PotentialSpec, params: &ModelParams) -> State {
    let mu = initial_mu(&phi, &sigma, spec, params, SchemeMode::Full).unwrap();
    State { phi, sigma, mu, t: 0.0 }
}

/// Advance or panic with the failing step's error.
fn run(
    state: &State,
    cfg: &SchemeConfig,
    spec: &PotentialSpec,
    params: &ModelParams,
    n: usize,
) -> (State, Vec<DiagnosticsRecord>) {
    advance(state, cfg, spec, params, n).into_completed().expect("run failed")
}

/// Least-squares slope of log(err) against log(scale): the measured
/// convergence order when `scales` halve (or `dt`s halve).
fn fitted_order(scales: &[f64], errors: &[f64]) -> f64 {
    let n = scales.len() as f64;
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let den: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    num / den
}

fn l2_diff(a: &Field, b: &Field) -> f64 {
    let d = Field {
        grid: a.grid,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
    };
    norm_l2(&d)
}

// ------------------------------------------------------------- criterion 1

/// Discrete Laplacian and gradient are second-order consistent on cosine
/// eigenfunctions, and the dual norm reproduces its closed-form value.
#[test]
fn criterion_1_operator_consistency() {
    let start = Instant::now();

    // Laplacian: on cos(pi x) the discrete operator acts as -lambda_h with
    // lambda_h = (2/h^2)(1 - cos(pi h)) = pi^2 (1 + O(h^2)).
    let mut hs = Vec::new();
    let mut lap_errs = Vec::new();
    let mut grad_errs = Vec::new();
    for nx in [16usize, 32, 64, 128] {
        let g = Grid::line(nx, 1.0).unwrap();
        let f = Field::from_fn(g, |x, _| (PI * x).cos());
        let lap = laplacian(&f);
        let lap_err = f
            .values
            .iter()
            .zip(&lap.values)
            .map(|(&v, &l)| (l + PI * PI * v).abs())
            .fold(0.0f64, f64::max);

        // Gradient at interior faces x = i h against -pi sin(pi x); boundary
        // faces carry the zero-flux value exactly.
        let grad = grad_faces(&f);
        let mut grad_err = 0.0f64;
        for i in 1..nx {
            let x = i as f64 * g.hx;
            grad_err = grad_err.max((grad.x[i] + PI * (PI * x).sin()).abs());
        }
        hs.push(g.hx);
        lap_errs.push(lap_err);
        grad_errs.push(grad_err);
    }
    let lap_order = fitted_order(&hs, &lap_errs);
    let grad_order = fitted_order(&hs, &grad_errs);
    assert!(
        (1.8..=2.2).contains(&lap_order),
        "Laplacian consistency order {lap_order} outside [1.8, 2.2] (errors {lap_errs:?})"
    );
    assert!(
        (1.8..=2.2).contains(&grad_order),
        "gradient consistency order {grad_order} outside [1.8, 2.2] (errors {grad_errs:?})"
    );

    // Dual norm of cos(pi x): || . ||_{V*}^2 = ||f||^2 / lambda_1 with
    // ||cos||^2 = 1/2, lambda_1 = pi^2, so the norm is 1 / (pi sqrt 2).
    let g = Grid::line(256, 1.0).unwrap();
    let f = Field::from_fn(g, |x, _| (PI * x).cos());
    let got = dual_norm(&f).unwrap();
    let want = 1.0 / (PI * 2.0f64.sqrt());
    let rel = (got - want).abs() / want;
    assert!(rel < 0.01, "dual norm {got} vs {want}: relative error {rel} >= 1%");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "criterion 1 took {elapsed:.1}s (budget 10s)");
    println!(
        "criterion 1 (operator consistency): PASS — laplacian order {lap_order:.3}, \
         gradient order {grad_order:.3}, dual norm rel err {rel:.2e}, {elapsed:.2}s"
    );
}

// ------------------------------------------------------------- criterion 2

/// The phase mean follows the closed-form relaxation ODE within 3 dt, stays
/// inside the coarse envelope with 2 dt slack, and is conserved exactly when
/// both sources vanish.
#[test]
fn criterion_2_mass_dynamics() {
    let start = Instant::now();
    let g = Grid::rect(128, 128, 1.0, 1.0).unwrap();
    let spec = PotentialSpec::flory_huggins(1.0);
    let cfg = SchemeConfig { dt: 1e-3, ..Default::default() };
    let n_steps = 500;

    // Relaxation: y' = -m y + h with y(0) = 0 (the cosine bump has zero
    // mean), solution y(t) = (h/m)(1 - e^{-m t}).
    let (m, h) = (2.0, 0.2);
    let params = ModelParams { chi: 0.3, m, h: HSpec::Constant(h), ..Default::default() };
    let phi0 = Field::from_fn(g, |x, y| 0.4 * (PI * x).cos() * (PI * y).cos());
    let sigma0 = Field::constant(g, 1.0);
    let s0 = state_from(phi0, sigma0, &spec, &params);
    let (_, series) = run(&s0, &cfg, &spec, &params, n_steps);

    let bound = (h / m) + 2.0 * cfg.dt; // max(|y0|, H/m) + 2 dt with y0 = 0
    let mut worst_ode = 0.0f64;
    for rec in &series {
        let exact = (h / m) * (1.0 - (-m * rec.t).exp());
        worst_ode = worst_ode.max((rec.phi_mean - exact).abs());
        assert!(
            rec.phi_mean.abs() <= bound,
            "t = {}: mean {} outside envelope bound {bound}",
            rec.t,
            rec.phi_mean
        );
    }
    assert!(
        worst_ode <= 3.0 * cfg.dt,
        "worst ODE mismatch {worst_ode} > 3 dt = {}",
        3.0 * cfg.dt
    );

    // Conservation: m = h = 0 pins the mean to machine precision.
    let params0 = ModelParams { chi: 0.3, m: 0.0, ..Default::default() };
    let phi0 = Field::from_fn(g, |x, y| 0.4 * (PI * x).cos() * (PI * y).cos() + 0.1);
    let sigma0 = Field::constant(g, 1.0);
    let y0 = mean(&phi0);
    let s0 = state_from(phi0, sigma0, &spec, &params0);
    let (_, series0) = run(&s0, &cfg, &spec, &params0, n_steps);
    let worst_drift =
        series0.iter().map(|r| (r.phi_mean - y0).abs()).fold(0.0f64, f64::max);
    assert!(worst_drift <= 1e-12, "conservative mean drifted by {worst_drift} > 1e-12");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 2 took {elapsed:.1}s (budget 30s)");
    println!(
        "criterion 2 (mass dynamics): PASS — worst ODE mismatch {worst_ode:.2e} (3dt = {:.0e}), \
         worst conservative drift {worst_drift:.2e}, {elapsed:.1}s",
        3.0 * cfg.dt
    );
}

// ------------------------------------------------------------- criterion 3

/// Sourceless gradient flow: the discrete free energy never increases over
/// 500 steps, and the sharp phase-field energy law (Ginzburg-Landau part
/// plus its dissipation) holds step by step.
#[test]
fn criterion_3_energy_monotonicity() {
    let g = Grid::rect(64, 64, 1.0, 1.0).unwrap();
    let spec = PotentialSpec::flory_huggins(1.0);
    let params = ModelParams { chi: 0.0, ..Default::default() };
    let cfg = SchemeConfig { dt: 1e-3, mode: SchemeMode::Sourceless, ..Default::default() };

    let mut rng = SplitMix64::new(42);
    let phi0 = Field::from_fn(g, |_, _| 0.5 * rng.next_symmetric());
    let sigma0 = Field::from_fn(g, |x, y| 1.0 + 0.5 * (PI * x).cos() * (PI * y).cos());
    let mu0 = initial_mu(&phi0, &sigma0, &spec, &params, cfg.mode).unwrap();
    let mut cur = State { phi: phi0, sigma: sigma0, mu: mu0, t: 0.0 };

    let mut prev_total = energy::free_energy(&cur, &spec, &params).unwrap().total;
    let mut worst_increase = f64::NEG_INFINITY;
    let mut worst_gl_law = f64::NEG_INFINITY;
    for step in 0..500 {
        let out = advance(&cur, &cfg, &spec, &params, 1);
        let (next, recs) = out.into_completed().unwrap_or_else(|e| panic!("step {step}: {e}"));
        let rec = &recs[0];

        let increase = rec.energy_total - prev_total;
        worst_increase = worst_increase.max(increase);
        assert!(
            increase <= 1e-12 * prev_total.abs().max(1.0),
            "step {step}: energy increased by {increase} (from {prev_total})"
        );

        // Sharp law for the phase part: [E_gl(next) - E_gl(prev)]/dt + D_phi
        // is nonpositive up to solver tolerance amplified by 1/dt.
        let e_prev = energy::free_energy(&cur, &spec, &params).unwrap();
        let e_next = energy::free_energy(&next, &spec, &params).unwrap();
        let gl_law = (e_next.ginzburg_landau - e_prev.ginzburg_landau) / cfg.dt
            + energy::dissipation_phi(&cur, &next, &params);
        worst_gl_law = worst_gl_law.max(gl_law);
        assert!(gl_law <= 1e-6, "step {step}: sharp phase energy law violated: {gl_law}");

        prev_total = rec.energy_total;
        cur = next;
    }
    println!(
        "criterion 3 (energy law): PASS — worst step increase {worst_increase:.2e}, \
         worst sharp GL law value {worst_gl_law:.2e}"
    );
}

// ------------------------------------------------------------- criterion 4

/// Minimum principle: the conservative nutrient law keeps sigma nonnegative
/// across the whole preset matrix, while the historical law on the
/// documented steep-interface scenario goes decisively negative.
#[test]
fn criterion_4_minimum_principle() {
    let g = Grid::rect(32, 32, 1.0, 1.0).unwrap();
    let cfg = SchemeConfig { dt: 1e-3, ..Default::default() };
    let potentials: [(&str, PotentialSpec); 3] = [
        ("flory_huggins", PotentialSpec::flory_huggins(1.0)),
        ("neg_log", PotentialSpec::neg_log(1.0)),
        ("regularized(8)", PotentialSpec::regularized(SingularKind::FloryHuggins, 8, 1.0)),
    ];
    let mobilities: [(&str, MobilityKind, MobilityKind); 2] = [
        ("constant", MobilityKind::Constant(1.0), MobilityKind::Constant(1.0)),
        (
            "varying",
            MobilityKind::PhaseGated { m0: 0.2, gain: 1.0 },
            MobilityKind::NutrientSaturating { m0: 0.5, gain: 0.5 },
        ),
    ];

    let mut cases = 0;
    for (pname, spec) in &potentials {
        for (mname, mob_m, mob_n) in &mobilities {
            for p in [1.6, 2.0] {
                let params = ModelParams {
                    chi: 1.5,
                    m: 1.0,
                    p,
                    mob_m: *mob_m,
                    mob_n: *mob_n,
                    ..Default::default()
                };
                let phi0 = tumor_seed(g, 0.3, 0.1);
                let sigma0 = Field::constant(g, 0.01);
                let s0 = state_from(phi0, sigma0, spec, &params);
                let (_, series) = advance(&s0, &cfg, spec, &params, 80)
                    .into_completed()
                    .unwrap_or_else(|e| panic!("{pname}/{mname}/p={p}: {e}"));
                let worst = series.iter().map(|r| r.sigma_min).fold(f64::INFINITY, f64::min);
                assert!(
                    worst >= -1e-12,
                    "{pname}/{mname}/p={p}: min sigma {worst} < -1e-12"
                );
                if spec.is_singular() {
                    let sep = series.iter().map(|r| r.sep_delta).fold(f64::INFINITY, f64::min);
                    assert!(sep > 0.0, "{pname}/{mname}/p={p}: |phi| reached 1");
                }
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 12);

    // Differential check on the documented steep-interface scenario: small
    // uniform nutrient against a sharp seed with strong chemotaxis. The
    // historical law's explicit -chi lap(phi) source drives sigma negative
    // within a few steps; the conservative law cannot.
    let g = Grid::rect(64, 64, 1.0, 1.0).unwrap();
    let spec = PotentialSpec::flory_huggins(1.0);
    let params = ModelParams { chi: 2.0, m: 1.0, ..Default::default() };
    let cfg = SchemeConfig { dt: 1e-4, ..Default::default() };
    let phi0 = tumor_seed(g, 0.25, 0.03);
    let sigma0 = Field::constant(g, 0.01);
    let s0 = state_from(phi0.clone(), sigma0.clone(), &spec, &params);

    let (_, full_series) = run(&s0, &cfg, &spec, &params, 200);
    let full_min = full_series.iter().map(|r| r.sigma_min).fold(f64::INFINITY, f64::min);
    assert!(full_min >= -1e-12, "conservative law lost positivity: {full_min}");

    let cfg_old = SchemeConfig { mode: SchemeMode::OldModel, ..cfg };
    let (_, old_series) = run(&s0, &cfg_old, &spec, &params, 200);
    let old_min = old_series.iter().map(|r| r.sigma_min).fold(f64::INFINITY, f64::min);
    assert!(
        old_min < -1e-6,
        "historical law stayed at {old_min} >= -1e-6 within 200 steps"
    );
    println!(
        "criterion 4 (minimum principle): PASS — 12 presets min sigma >= -1e-12, \
         historical law bottomed at {old_min:.2e}, conservative at {full_min:.2e}"
    );
}

// ------------------------------------------------------------- criterion 5

/// Interior confinement and separation: the singular potential keeps
/// max|phi| < 1 everywhere, and in the planar constant-mobility regime the
/// running separation margin over the tail of the run stays strictly
/// positive.
#[test]
fn criterion_5_confinement_separation() {
    let g = Grid::rect(48, 48, 1.0, 1.0).unwrap();
    let spec = PotentialSpec::flory_huggins(1.0);
    let params = ModelParams {
        chi: 0.3,
        m: 1.0,
        h: HSpec::Constant(0.05),
        ..Default::default()
    };
    let cfg = SchemeConfig { dt: 1e-3, ..Default::default() };
    let n_steps = 300;

    let phi0 = tumor_seed(g, 0.3, 0.1);
    let sigma0 = Field::constant(g, 1.0);
    let s0 = state_from(phi0, sigma0, &spec, &params);
    let (_, series) = run(&s0, &cfg, &spec, &params, n_steps);

    // Confinement at every step (sep_delta = 1 - max|phi|).
    for rec in &series {
        assert!(rec.sep_delta > 0.0, "t = {}: max|phi| reached 1", rec.t);
    }
    // Separation over the tail [0.1 T, T].
    let t_total = cfg.dt * n_steps as f64;
    let tail_inf = series
        .iter()
        .filter(|r| r.t >= 0.1 * t_total)
        .map(|r| r.sep_delta)
        .fold(f64::INFINITY, f64::min);
    assert!(
        tail_inf > 0.0 && tail_inf.is_finite(),
        "running separation infimum {tail_inf} not strictly positive"
    );
    println!(
        "criterion 5 (confinement/separation): PASS — inf of (1 - max|phi|) over \
         [0.1T, T] = {tail_inf:.4e}"
    );
}

// ------------------------------------------------------------- criterion 6

/// The regularized scheme converges to the singular reference as the
/// truncation level grows: nutrient errors decrease monotonically and the
/// phase overshoot beyond the physical interval is tiny at the top level.
#[test]
fn criterion_6_truncation_convergence() {
    let start = Instant::now();
    let g = Grid::rect(96, 96, 1.0, 1.0).unwrap();
    let spec = PotentialSpec::flory_huggins(1.0);
    // Carrying capacity kappa0/kappa_inf = 6 exceeds the lowest truncation
    // level, so the cutoff genuinely engages at n = 4.
    let params = ModelParams {
        chi: 0.5,
        m: 1.0,
        kappa0: 1.2,
        kappa_inf: 0.2,
        ..Default::default()
    };
    let cfg = SchemeConfig { dt: 1e-3, ..Default::default() };
    let n_steps = 150;
    let phi0 = tumor_seed(g, 0.3, 0.08);
    let sigma0 = Field::constant(g, 5.0);
    let s0 = state_from(phi0, sigma0, &spec, &params);

    let (reference, _) = run(&s0, &cfg, &spec, &params, n_steps);

    let mut sigma_errs = Vec::new();
    let mut excursions = Vec::new();
    for level in [4u32, 8, 16] {
        let cfg_n = SchemeConfig { mode: SchemeMode::Approximation(level), ..cfg };
        let (state, series) = run(&s0, &cfg_n, &spec, &params, n_steps);
        sigma_errs.push(l2_diff(&state.sigma, &reference.sigma));
        excursions.push(series.iter().fold(0.0f64, |a, r| a.max(-r.sep_delta)).max(0.0));
    }
    assert!(
        sigma_errs[0] > sigma_errs[1] && sigma_errs[1] > sigma_errs[2],
        "sigma errors not monotone: {sigma_errs:?}"
    );
    assert!(
        excursions[0] >= excursions[1] && excursions[1] >= excursions[2],
        "phase excursions not monotone: {excursions:?}"
    );
    assert!(
        excursions[2] <= 1e-3,
        "phase excursion {} at level 16 exceeds 1e-3",
        excursions[2]
    );

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 6 took {elapsed:.1}s (budget 120s)");
    println!(
        "criterion 6 (truncation convergence): PASS — sigma errors {sigma_errs:?}, \
         excursions {excursions:?}, {elapsed:.1}s"
    );
}

// ------------------------------------------------------------- criterion 7

/// Continuous dependence: the empirical stability ratio is finite and stable
/// across three perturbation decades, and halving the nutrient perturbation
/// halves the dual-norm supremum within 25%.
#[test]
fn criterion_7_continuous_dependence() {
    let g = Grid::rect(48, 48, 1.0, 1.0).unwrap();
    let spec = PotentialSpec::flory_huggins(1.0);
    let params = ModelParams {
        chi: 0.3,
        m: 1.0,
        h: HSpec::Constant(0.05),
        ..Default::default()
    };
    let cfg = SchemeConfig { dt: 1e-3, ..Default::default() };
    let n_steps = 100;

    let phi_base = tumor_seed(g, 0.3, 0.1);
    let sigma_base = Field::constant(g, 1.0);

    // Zero-mean perturbation directions keep both sides of the estimate
    // homogeneous of the same degree, so the ratio is comparable across
    // amplitudes.
    let dphi = Field::from_fn(g, |x, y| 0.2 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos());
    let dsigma = Field::from_fn(g, |x, _| 0.5 * (2.0 * PI * x).cos());

    let trajectory = |phi0: &Field, sigma0: &Field| -> Vec<State> {
        let mut cur = state_from(phi0.clone(), sigma0.clone(), &spec, &params);
        let mut states = vec![cur.clone()];
        for step in 0..n_steps {
            let out = advance(&cur, &cfg, &spec, &params, 1);
            let (next, _) = out.into_completed().unwrap_or_else(|e| panic!("step {step}: {e}"));
            cur = next;
            states.push(cur.clone());
        }
        states
    };
    let perturbed = |a: f64, with_phi: bool| -> (Field, Field) {
        let phi = if with_phi {
            Field {
                grid: g,
                values: phi_base.values.iter().zip(&dphi.values).map(|(p, d)| p + a * d).collect(),
            }
        } else {
            phi_base.clone()
        };
        let sigma = Field {
            grid: g,
            values: sigma_base
                .values
                .iter()
                .zip(&dsigma.values)
                .map(|(s, d)| s + a * d)
                .collect(),
        };
        (phi, sigma)
    };

    let base_traj = trajectory(&phi_base, &sigma_base);
    let mut ratios = Vec::new();
    for a in [1e-2, 1e-3, 1e-4] {
        let (phi, sigma) = perturbed(a, true);
        let traj = trajectory(&phi, &sigma);
        let m = twin_metrics(&base_traj, &traj, cfg.dt).unwrap();
        let ratio = m.ratio();
        assert!(ratio.is_finite() && ratio > 0.0, "amplitude {a}: ratio {ratio}");
        ratios.push(ratio);
    }
    let (rmin, rmax) =
        ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    assert!(
        rmax / rmin <= 2.0,
        "stability ratios {ratios:?} spread by {}x > 2x",
        rmax / rmin
    );

    // Halving a nutrient-only perturbation halves sup_t ||sigma1 - sigma2||_*.
    let sup_sigma_star = |a: f64| -> f64 {
        let (phi, sigma) = perturbed(a, false);
        let traj = trajectory(&phi, &sigma);
        let m = twin_metrics(&base_traj, &traj, cfg.dt).unwrap();
        (m.sup_sigma_dual_sq + m.sup_sigma_mean_sq).sqrt()
    };
    let s1 = sup_sigma_star(1e-3);
    let s2 = sup_sigma_star(5e-4);
    let halving = s2 / s1;
    assert!(
        (0.375..=0.625).contains(&halving),
        "halving the perturbation scaled the sigma sup norm by {halving} (want 0.5 +- 25%)"
    );
    println!(
        "criterion 7 (continuous dependence): PASS — ratios {ratios:?} (spread {:.2}x), \
         halving factor {halving:.3}",
        rmax / rmin
    );
}

// ------------------------------------------------------------- criterion 8

/// Manufactured-solution convergence: second order in space (coupled
/// refinement) and first order in time (self-convergence against a tiny-dt
/// reference on the same grid).
#[test]
fn criterion_8_manufactured_convergence() {
    let start = Instant::now();

    // Exact fields phi* = a cos(pi x) e^-t, sigma* = 1 + b cos(pi x) e^-t on
    // [0, 1]; unit mobilities, lambda = 0, no relaxation source (m = h = 0),
    // logistic exchange kappa0 = kappa_inf = 1, p = 2 folded into the
    // forcing. Flory-Huggins F1 has F1'' = 2/(1-r^2), F1''' = 4r/(1-r^2)^2.
    const A: f64 = 0.5;
    const B: f64 = 0.25;
    let phi_star = |x: f64, t: f64| A * (PI * x).cos() * (-t).exp();
    let sigma_star = |x: f64, t: f64| 1.0 + B * (PI * x).cos() * (-t).exp();

    let make_params = |chi: f64| ModelParams { chi, m: 0.0, ..Default::default() };
    let spec = PotentialSpec::flory_huggins(0.0);

    let f_phi = move |chi: f64| {
        move |x: f64, _y: f64, t: f64| {
            let p = phi_star(x, t);
            let px = -A * PI * (PI * x).sin() * (-t).exp();
            let shat = sigma_star(x, t) - 1.0;
            let f2 = 2.0 / (1.0 - p * p);
            let f3 = 4.0 * p / (1.0 - p * p).powi(2);
            -p + PI.powi(4) * p + PI * PI * p * f2 - f3 * px * px - chi * PI * PI * shat
        }
    };
    let f_sigma = move |chi: f64| {
        move |x: f64, _y: f64, t: f64| {
            let p = phi_star(x, t);
            let s = sigma_star(x, t);
            let shat = s - 1.0;
            let px = -A * PI * (PI * x).sin() * (-t).exp();
            let sx = -B * PI * (PI * x).sin() * (-t).exp();
            let pxx = -PI * PI * p;
            -shat + PI * PI * shat + chi * (sx * px + s * pxx) - (s - s * s)
        }
    };

    let forced_run = |nx: usize, dt: f64, n: usize, chi: f64| -> State {
        let g = Grid::line(nx, 1.0).unwrap();
        let params = make_params(chi);
        let phi0 = Field::from_fn(g, |x, _| phi_star(x, 0.0));
        let sigma0 = Field::from_fn(g, |x, _| sigma_star(x, 0.0));
        let s0 = state_from(phi0, sigma0, &spec, &params);
        let cfg = SchemeConfig { dt, ..Default::default() };
        let fp = f_phi(chi);
        let fs = f_sigma(chi);
        let forcing = Forcing { phi: Some(&fp), sigma: Some(&fs) };
        advance_forced(&s0, &cfg, &spec, &params, n, forcing, None, None)
            .into_completed()
            .unwrap_or_else(|e| panic!("nx={nx} dt={dt}: {e}"))
            .0
    };

    // Spatial study at chi = 0 (central diffusion only, so both fields are
    // second order) with dt tied to h^2.
    let t_end = 0.01;
    let mut hs = Vec::new();
    let mut phi_errs = Vec::new();
    let mut sigma_errs = Vec::new();
    for (nx, n) in [(32usize, 10usize), (64, 40), (128, 160)] {
        let dt = t_end / n as f64;
        let state = forced_run(nx, dt, n, 0.0);
        let g = state.phi.grid;
        let exact_phi = Field::from_fn(g, |x, _| phi_star(x, t_end));
        let exact_sigma = Field::from_fn(g, |x, _| sigma_star(x, t_end));
        hs.push(g.hx);
        phi_errs.push(l2_diff(&state.phi, &exact_phi));
        sigma_errs.push(l2_diff(&state.sigma, &exact_sigma));
    }
    let space_phi = fitted_order(&hs, &phi_errs);
    let space_sigma = fitted_order(&hs, &sigma_errs);
    assert!(space_phi >= 1.8, "spatial phase order {space_phi} < 1.8 ({phi_errs:?})");
    assert!(space_sigma >= 1.8, "spatial nutrient order {space_sigma} < 1.8 ({sigma_errs:?})");

    // Temporal study at chi = 0.3 on a fixed grid, errors against a tiny-dt
    // reference on the same grid (isolating the time discretization).
    let nx = 64;
    let t_end = 0.05;
    let reference = forced_run(nx, t_end / 3200.0, 3200, 0.3);
    let mut dts = Vec::new();
    let mut tphi_errs = Vec::new();
    let mut tsigma_errs = Vec::new();
    for n in [25usize, 50, 100] {
        let dt = t_end / n as f64;
        let state = forced_run(nx, dt, n, 0.3);
        dts.push(dt);
        tphi_errs.push(l2_diff(&state.phi, &reference.phi));
        tsigma_errs.push(l2_diff(&state.sigma, &reference.sigma));
    }
    let time_phi = fitted_order(&dts, &tphi_errs);
    let time_sigma = fitted_order(&dts, &tsigma_errs);
    assert!(time_phi >= 0.8, "temporal phase order {time_phi} < 0.8 ({tphi_errs:?})");
    assert!(time_sigma >= 0.8, "temporal nutrient order {time_sigma} < 0.8 ({tsigma_errs:?})");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 8 took {elapsed:.1}s (budget 5 min)");
    println!(
        "criterion 8 (manufactured convergence): PASS — spatial orders phi {space_phi:.2} / \
         sigma {space_sigma:.2}, temporal phi {time_phi:.2} / sigma {time_sigma:.2}, {elapsed:.1}s"
    );
}

// ------------------------------------------------------------- criterion 9

/// Validation gates: each documented inadmissible configuration is rejected
/// with exit code 2 and exactly the golden transcript on standard error.
#[test]
fn criterion_9_validation_gates() {
    let golden_dir = format!("{}/tests/golden", env!("CARGO_MANIFEST_DIR"));
    let cases = [
        "h_compat",      // sup|h| >= m breaks the mean relaxation envelope
        "p_window",      // logistic exponent outside the admissible window
        "smallness_3d",  // chemotaxis too strong for the strict-3D regime
        "phase_mean",    // initial phase mean on the boundary of (-1, 1)
        "negative_sigma",// negative initial nutrient
    ];
    for name in cases {
        let config = format!("{golden_dir}/{name}.ini");
        let golden = std::fs::read(format!("{golden_dir}/{name}.stderr"))
            .unwrap_or_else(|e| panic!("{name}: missing golden transcript: {e}"));
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_chks"))
            .args(["run", "--config", &config])
            .output()
            .expect("binary failed to start");
        assert_eq!(
            out.status.code(),
            Some(2),
            "{name}: exit code {:?}, stderr: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        assert_eq!(
            out.stderr,
            golden,
            "{name}: stderr drifted from golden transcript.\n got: {}\nwant: {}",
            String::from_utf8_lossy(&out.stderr),
            String::from_utf8_lossy(&golden)
        );
    }
    println!("criterion 9 (validation gates): PASS — {} golden rejections", cases.len());
}
