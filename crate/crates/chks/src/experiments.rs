//! The four experiment drivers behind the command-line interface.
//!
//! * `run` — one trajectory, diagnostics CSV, field snapshots.
//! * `twin` — two trajectories from perturbed initial data and the
//!   continuous-dependence metrics (the only place `--threads` buys
//!   anything: the twins are independent).
//! * `nconv` — the regularized scheme at increasing truncation levels
//!   against the singular reference.
//! * `compare` — the conservative nutrient law against the historical
//!   non-conservative one, tracking the minimum principle and the boundary
//!   flux terms that distinguish them.
//!
//! Every driver returns `Ok(true)` on a completed experiment, `Ok(false)`
//! when a step failed at runtime (the failure is already recorded in the
//! output files), and `Err` only for infrastructure problems.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::diagnostics::{chemotaxis_boundary_terms, twin_instant, twin_metrics, SubVolume};
use crate::error::Result;
use crate::grid::{mean, norm_l2, Field};
use crate::output::{ensure_dir, write_csv, write_pgm, write_raw};
use crate::rng::SplitMix64;
use crate::stepper::{
    advance_forced, initial_mu, Forcing, RunAnchor, SchemeConfig, SchemeMode, State, StepFailure,
};

fn initial_state(rc: &RunConfig, mode: SchemeMode) -> Result<State> {
    let mu = initial_mu(&rc.phi0, &rc.sigma0, &rc.spec, &rc.params, mode)?;
    Ok(State { phi: rc.phi0.clone(), mu, sigma: rc.sigma0.clone(), t: 0.0 })
}

fn snapshot(dir: &Path, state: &State, tag: &str) -> Result<()> {
    for (name, field) in [("phi", &state.phi), ("sigma", &state.sigma), ("mu", &state.mu)] {
        write_pgm(&dir.join(format!("{name}{tag}.pgm")), field)?;
        write_raw(&dir.join(format!("{name}{tag}.raw")), field)?;
    }
    Ok(())
}

/// One trajectory with full diagnostics output.
pub fn cmd_run(rc: &RunConfig) -> Result<bool> {
    ensure_dir(&rc.out_dir)?;
    let csv_path = rc.out_dir.join(&rc.csv_name);
    let mut cur = initial_state(rc, rc.scheme.mode)?;
    let anchor = RunAnchor { y0: mean(&cur.phi), t0: 0.0 };
    let mut series = Vec::with_capacity(rc.n_steps);

    let chunk = if rc.fields_every == 0 { rc.n_steps.max(1) } else { rc.fields_every };
    if rc.fields_every > 0 {
        snapshot(&rc.out_dir, &cur, "_000000")?;
    }
    let mut done = 0usize;
    while done < rc.n_steps {
        let take = chunk.min(rc.n_steps - done);
        let out = advance_forced(
            &cur,
            &rc.scheme,
            &rc.spec,
            &rc.params,
            take,
            Forcing::NONE,
            rc.subvolume,
            Some(anchor),
        );
        series.extend(out.series);
        cur = out.state;
        if let Some(f) = out.failure {
            let failure = StepFailure { step: done + f.step, error: f.error };
            write_csv(&csv_path, &series, Some(&failure))?;
            snapshot(&rc.out_dir, &cur, "")?;
            eprintln!("run aborted: step {} failed: {}", failure.step, failure.error);
            return Ok(false);
        }
        done += take;
        if rc.fields_every > 0 && done < rc.n_steps {
            snapshot(&rc.out_dir, &cur, &format!("_{done:06}"))?;
        }
    }
    write_csv(&csv_path, &series, None)?;
    snapshot(&rc.out_dir, &cur, "")?;
    if let Some(last) = series.last() {
        println!(
            "run complete: {} steps to t = {}, energy = {:.6e}, sigma_min = {:.3e}, sep_delta = {:.3e}",
            rc.n_steps, last.t, last.energy_total, last.sigma_min, last.sep_delta
        );
    } else {
        println!("run complete: 0 steps");
    }
    Ok(true)
}

/// Run one trajectory, keeping every state (initial included).
fn collect_states(
    rc: &RunConfig,
    phi0: &Field,
    sigma0: &Field,
) -> Result<std::result::Result<Vec<State>, StepFailure>> {
    let mu = initial_mu(phi0, sigma0, &rc.spec, &rc.params, rc.scheme.mode)?;
    let mut cur = State { phi: phi0.clone(), mu, sigma: sigma0.clone(), t: 0.0 };
    let anchor = RunAnchor { y0: mean(&cur.phi), t0: 0.0 };
    let mut states = Vec::with_capacity(rc.n_steps + 1);
    states.push(cur.clone());
    for step in 0..rc.n_steps {
        let out = advance_forced(
            &cur,
            &rc.scheme,
            &rc.spec,
            &rc.params,
            1,
            Forcing::NONE,
            rc.subvolume,
            Some(anchor),
        );
        cur = out.state;
        if let Some(f) = out.failure {
            return Ok(Err(StepFailure { step, error: f.error }));
        }
        states.push(cur.clone());
    }
    Ok(Ok(states))
}

/// Perturbed copies of the initial data: the phase perturbation is scaled by
/// the local margin `1 - phi^2` (so it can never leave the physical
/// interval and responds linearly to the amplitude), the nutrient one is
/// relative (preserving nonnegativity for amplitudes below 1).
pub fn perturbed_initial(
    phi0: &Field,
    sigma0: &Field,
    amplitude: f64,
    seed: u64,
) -> (Field, Field) {
    let mut rng = SplitMix64::new(seed);
    let phi = Field {
        grid: phi0.grid,
        values: phi0
            .values
            .iter()
            .map(|&p| p + amplitude * rng.next_symmetric() * (1.0 - p * p))
            .collect(),
    };
    let sigma = Field {
        grid: sigma0.grid,
        values: sigma0
            .values
            .iter()
            .map(|&s| s * (1.0 + amplitude * rng.next_symmetric()))
            .collect(),
    };
    (phi, sigma)
}

/// Twin-trajectory continuous-dependence experiment.
pub fn cmd_twin(rc: &RunConfig, threads: usize) -> Result<bool> {
    ensure_dir(&rc.out_dir)?;
    let (phi_b, sigma_b) =
        perturbed_initial(&rc.phi0, &rc.sigma0, rc.twin_perturbation, rc.twin_seed);

    let (outcome_a, outcome_b) = if threads >= 2 {
        std::thread::scope(|scope| {
            let a = scope.spawn(|| collect_states(rc, &rc.phi0, &rc.sigma0));
            let b = scope.spawn(|| collect_states(rc, &phi_b, &sigma_b));
            (a.join().expect("twin thread panicked"), b.join().expect("twin thread panicked"))
        })
    } else {
        (collect_states(rc, &rc.phi0, &rc.sigma0), collect_states(rc, &phi_b, &sigma_b))
    };
    let (traj_a, traj_b) = match (outcome_a?, outcome_b?) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(f), _) | (_, Err(f)) => {
            eprintln!("twin aborted: step {} failed: {}", f.step, f.error);
            return Ok(false);
        }
    };

    // Per-time difference measures, then the trajectory-level summary as
    // comment rows (one CSV, two layers).
    let mut text = String::from(
        "t,phi_dual_sq,phi_mean_sq,phi_mean_abs,sigma_dual_sq,sigma_mean_sq,phi_v_sq,sigma_l2_sq\n",
    );
    for (sa, sb) in traj_a.iter().zip(&traj_b) {
        let i = twin_instant(sa, sb)?;
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            sa.t,
            i.phi_dual_sq,
            i.phi_mean_sq,
            i.phi_mean_abs,
            i.sigma_dual_sq,
            i.sigma_mean_sq,
            i.phi_v_sq,
            i.sigma_l2_sq
        );
    }
    let m = twin_metrics(&traj_a, &traj_b, rc.scheme.dt)?;
    text.push_str("# summary\n");
    for (name, value) in [
        ("sup_phi_dual_sq", m.sup_phi_dual_sq),
        ("sup_phi_mean_sq", m.sup_phi_mean_sq),
        ("sup_phi_mean_abs", m.sup_phi_mean_abs),
        ("sup_sigma_dual_sq", m.sup_sigma_dual_sq),
        ("sup_sigma_mean_sq", m.sup_sigma_mean_sq),
        ("int_phi_v_sq", m.int_phi_v_sq),
        ("int_sigma_l2_sq", m.int_sigma_l2_sq),
        ("rhs_phi_dual_sq", m.rhs_phi_dual_sq),
        ("rhs_phi_mean_sq", m.rhs_phi_mean_sq),
        ("rhs_phi_mean_abs", m.rhs_phi_mean_abs),
        ("rhs_sigma_dual_sq", m.rhs_sigma_dual_sq),
        ("rhs_sigma_mean_sq", m.rhs_sigma_mean_sq),
        ("lhs_total", m.lhs_total()),
        ("rhs_total", m.rhs_total()),
        ("ratio", m.ratio()),
    ] {
        let _ = writeln!(text, "# {name} = {value}");
    }
    std::fs::write(rc.out_dir.join("twin.csv"), text)?;
    println!(
        "twin complete: perturbation {:.1e}, lhs = {:.6e}, rhs = {:.6e}, ratio = {:.4e}",
        rc.twin_perturbation,
        m.lhs_total(),
        m.rhs_total(),
        m.ratio()
    );
    Ok(true)
}

fn l2_diff(a: &Field, b: &Field) -> f64 {
    let diff = Field {
        grid: a.grid,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
    };
    norm_l2(&diff)
}

/// Truncation-convergence study: the regularized scheme at each level
/// against the singular reference, measured at the final time. An empty
/// level list runs just the reference (empty comparison table).
pub fn cmd_nconv(rc: &RunConfig) -> Result<bool> {
    ensure_dir(&rc.out_dir)?;
    let run_mode = |mode: SchemeMode| -> Result<std::result::Result<(State, f64), StepFailure>> {
        let cfg = SchemeConfig { mode, ..rc.scheme };
        let mut cur = initial_state(rc, mode)?;
        let anchor = RunAnchor { y0: mean(&cur.phi), t0: 0.0 };
        let out = advance_forced(
            &cur,
            &cfg,
            &rc.spec,
            &rc.params,
            rc.n_steps,
            Forcing::NONE,
            rc.subvolume,
            Some(anchor),
        );
        cur = out.state;
        if let Some(f) = out.failure {
            return Ok(Err(f));
        }
        // Worst overshoot of the phase interval across the run (positive
        // part of max|phi| - 1, which the records carry as -sep_delta).
        let excursion =
            out.series.iter().fold(0.0f64, |a, r| a.max(-r.sep_delta)).max(0.0);
        Ok(Ok((cur, excursion)))
    };

    let reference = match run_mode(SchemeMode::Full)? {
        Ok((state, _)) => state,
        Err(f) => {
            eprintln!("nconv aborted: reference run failed at step {}: {}", f.step, f.error);
            return Ok(false);
        }
    };
    write_raw(&rc.out_dir.join("sigma_ref.raw"), &reference.sigma)?;
    write_raw(&rc.out_dir.join("phi_ref.raw"), &reference.phi)?;

    let mut text = String::from("level,phi_err_l2,sigma_err_l2,phi_excursion\n");
    println!("level   ||phi_n - phi_ref||_L2   ||sigma_n - sigma_ref||_L2   max(|phi_n| - 1)+");
    for &level in &rc.nconv_levels {
        let (state, excursion) = match run_mode(SchemeMode::Approximation(level))? {
            Ok(ok) => ok,
            Err(f) => {
                eprintln!("nconv aborted: level {level} failed at step {}: {}", f.step, f.error);
                return Ok(false);
            }
        };
        let phi_err = l2_diff(&state.phi, &reference.phi);
        let sigma_err = l2_diff(&state.sigma, &reference.sigma);
        let _ = writeln!(text, "{level},{phi_err},{sigma_err},{excursion}");
        println!("{level:>5}   {phi_err:<22e}   {sigma_err:<26e}   {excursion:e}");
        write_raw(&rc.out_dir.join(format!("sigma_n{level}.raw")), &state.sigma)?;
    }
    std::fs::write(rc.out_dir.join("nconv.csv"), text)?;
    Ok(true)
}

/// Conservative vs historical nutrient law, same initial data: tracks both
/// minimum principles and the chemotactic boundary terms (nutrient-weighted
/// for the conservative law, unweighted for the historical one) through the
/// diagnostic subvolume boundary.
pub fn cmd_compare(rc: &RunConfig) -> Result<bool> {
    ensure_dir(&rc.out_dir)?;
    let sub = rc.subvolume.unwrap_or_else(|| SubVolume::left_half(rc.grid));
    let cfg_full = SchemeConfig { mode: SchemeMode::Full, ..rc.scheme };
    let cfg_old = SchemeConfig { mode: SchemeMode::OldModel, ..rc.scheme };
    let mut full = initial_state(rc, SchemeMode::Full)?;
    let mut old = initial_state(rc, SchemeMode::OldModel)?;
    let anchor = RunAnchor { y0: mean(&full.phi), t0: 0.0 };

    let mut text =
        String::from("t,sigma_min_full,sigma_min_old,boundary_weighted,boundary_unweighted,boundary_gap\n");
    let mut first_negative: Option<usize> = None;
    let mut completed = true;
    for step in 0..rc.n_steps {
        let out_full = advance_forced(
            &full, &cfg_full, &rc.spec, &rc.params, 1, Forcing::NONE, rc.subvolume, Some(anchor),
        );
        let out_old = advance_forced(
            &old, &cfg_old, &rc.spec, &rc.params, 1, Forcing::NONE, rc.subvolume, Some(anchor),
        );
        full = out_full.state;
        old = out_old.state;
        if let Some(f) = out_full.failure.or(out_old.failure) {
            let _ = writeln!(text, "# step {step} failed: {}", f.error);
            eprintln!("compare aborted: step {step} failed: {}", f.error);
            completed = false;
            break;
        }
        let (weighted, unweighted) = chemotaxis_boundary_terms(&full, &sub, &rc.params)?;
        let (smin_full, smin_old) = (full.sigma.min(), old.sigma.min());
        if smin_old < 0.0 && first_negative.is_none() {
            first_negative = Some(step);
        }
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            full.t,
            smin_full,
            smin_old,
            weighted,
            unweighted,
            weighted - unweighted
        );
    }
    std::fs::write(rc.out_dir.join("compare.csv"), text)?;
    match first_negative {
        Some(step) => println!(
            "compare complete: historical law lost positivity at step {step} (min {:.3e}); conservative law min {:.3e}",
            old.sigma.min(),
            full.sigma.min()
        ),
        None => println!(
            "compare complete: both laws stayed nonnegative (conservative min {:.3e}, historical min {:.3e})",
            full.sigma.min(),
            old.sigma.min()
        ),
    }
    Ok(completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load_config, FlagOverrides};

    fn demo_config(dir: &Path) -> RunConfig {
        let text = format!(
            "[grid]\ndim = 1\nnx = 16\nlx = 1.0\n\n\
             [scheme]\ndt = 1e-3\nn_steps = 3\n\n\
             [ic]\nphi = cosine_bump:0.3\nsigma = uniform:1.0\n\n\
             [output]\ndir = {}\n",
            dir.display()
        );
        load_config(&text, &[], &FlagOverrides::default()).unwrap()
    }

    #[test]
    fn run_writes_csv_and_snapshots() {
        let dir = std::env::temp_dir().join(format!("chks-run-{}", std::process::id()));
        let rc = demo_config(&dir);
        assert!(cmd_run(&rc).unwrap());
        let csv = std::fs::read_to_string(dir.join("diagnostics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4); // header + 3 steps
        assert!(dir.join("phi.raw").exists());
        assert!(dir.join("sigma.pgm").exists());
    }

    #[test]
    fn perturbation_scales_linearly_and_stays_admissible() {
        let g = crate::grid::Grid::rect(8, 8, 1.0, 1.0).unwrap();
        let phi = Field::from_fn(g, |x, _| 0.9 * (std::f64::consts::PI * x).cos());
        let sigma = Field::constant(g, 2.0);
        let (p1, s1) = perturbed_initial(&phi, &sigma, 0.1, 3);
        let (p2, s2) = perturbed_initial(&phi, &sigma, 0.05, 3);
        assert!(p1.norm_linf() < 1.0);
        assert!(s1.min() >= 0.0);
        // Same noise stream, half the amplitude: differences halve exactly.
        for k in 0..p1.values.len() {
            let d1 = p1.values[k] - phi.values[k];
            let d2 = p2.values[k] - phi.values[k];
            assert!((d1 - 2.0 * d2).abs() < 1e-15);
            let e1 = s1.values[k] - sigma.values[k];
            let e2 = s2.values[k] - sigma.values[k];
            assert!((e1 - 2.0 * e2).abs() < 1e-12);
        }
    }

    #[test]
    fn twin_threads_match_sequential() {
        let dir1 = std::env::temp_dir().join(format!("chks-twin1-{}", std::process::id()));
        let dir2 = std::env::temp_dir().join(format!("chks-twin2-{}", std::process::id()));
        let mut rc1 = demo_config(&dir1);
        rc1.out_dir = dir1.clone();
        let mut rc2 = demo_config(&dir2);
        rc2.out_dir = dir2.clone();
        assert!(cmd_twin(&rc1, 1).unwrap());
        assert!(cmd_twin(&rc2, 2).unwrap());
        let a = std::fs::read_to_string(dir1.join("twin.csv")).unwrap();
        let b = std::fs::read_to_string(dir2.join("twin.csv")).unwrap();
        assert_eq!(a, b);
    }
}
