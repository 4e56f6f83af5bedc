//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the PASS/FAIL lines are
//! always printed. Pass criterion numbers as arguments to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use langevin_splitting::analysis::{
    distribution_distance, empirical_distribution, ensemble_snapshots, exp_moment_monitor, h0_dissipation_compare,
    lyapunov_check, msd_ensemble, p_squared, phase_area, q_fourth, sin_product, sin_radius, step_jacobians,
    ErgodicExperiment, ErrorExperiment,
};
use langevin_splitting::detflow::energy_residual;
use langevin_splitting::model::energy_h;
use langevin_splitting::{ConservativeMap, PhysParams, SchemeSpec, SeedPolicy, State};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn levels(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|i| 2.0_f64.powi(-i)).collect()
}

fn prm(u: f64, s: f64) -> PhysParams {
    PhysParams::new(u, s).expect("valid parameters")
}

fn convergence_setup(spec: SchemeSpec, taus: Vec<f64>, fine_dt: f64, n_paths: usize, seed: u64) -> ErrorExperiment {
    ErrorExperiment {
        spec,
        prm: prm(10.0, 1.0),
        initial: State::new(1.0, 1.0),
        horizon: 1.0,
        taus,
        fine_dt,
        n_paths,
        seeds: SeedPolicy::new(seed),
        workers: 0,
    }
}

fn strong_order() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for map in ConservativeMap::ENERGY_PRESERVING {
        let e = convergence_setup(SchemeSpec::lie_trotter(map), levels(6, 10), 2.0_f64.powi(-13), 1000, 101);
        match e.strong_error().and_then(|s| s.fit()) {
            Ok(fit) => {
                pass &= (0.85..=1.15).contains(&fit.slope) && fit.r_squared > 0.98;
                parts.push(format!("{} slope {:.3} r2 {:.4}", e.spec.label(), fit.slope, fit.r_squared));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("{}: {err}", e.spec.label()));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn weak_order() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for map in ConservativeMap::ENERGY_PRESERVING {
        let e = convergence_setup(SchemeSpec::lie_trotter(map), levels(6, 10), 2.0_f64.powi(-13), 5000, 202);
        match e.weak_error(sin_product).and_then(|s| s.fit()) {
            Ok(fit) => {
                pass &= (0.8..=1.2).contains(&fit.slope);
                parts.push(format!("{} slope {:.3}", e.spec.label(), fit.slope));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("{}: {err}", e.spec.label()));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn strang_weak_order() -> Outcome {
    let e = convergence_setup(SchemeSpec::strang(ConservativeMap::Avf), levels(5, 8), 2.0_f64.powi(-12), 10_000, 303);
    match e.weak_error(sin_radius) {
        Ok(study) => {
            let errs: Vec<String> =
                study.levels.iter().map(|l| format!("{:.2e}±{:.1e}", l.error, l.std_error)).collect();
            match study.fit() {
                Ok(fit) => outcome(
                    (1.7..=2.3).contains(&fit.slope),
                    format!("slope {:.3} errors [{}]", fit.slope, errs.join(", ")),
                ),
                Err(err) => outcome(false, format!("{err}; errors [{}]", errs.join(", "))),
            }
        }
        Err(err) => outcome(false, err.to_string()),
    }
}

fn energy_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let states: Vec<State> =
        (0..10_000).map(|_| State::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    for map in ConservativeMap::ENERGY_PRESERVING {
        for u in [2.0, 10.0, 15.0] {
            let m = prm(u, 1.0);
            for tau in [2.0_f64.powi(-6), 2.0_f64.powi(-10)] {
                for &s in &states {
                    match energy_residual(map, s, tau, &m) {
                        Ok(r) => worst = worst.max(r / (1.0 + energy_h(s, &m).abs())),
                        Err(_) => failures += 1,
                    }
                }
            }
        }
    }
    outcome(
        failures == 0 && worst <= 1e-9,
        format!("worst relative drift {worst:.2e} over 180000 steps, {failures} solver failures"),
    )
}

fn lyapunov() -> Outcome {
    let states = [State::ORIGIN, State::new(1.0, 1.0), State::new(2.0, -1.0)];
    let mut pass = true;
    let mut min_margin = f64::INFINITY;
    let mut checked = 0;
    for map in ConservativeMap::ENERGY_PRESERVING {
        for u in [10.0, 15.0] {
            for tau in [2.0_f64.powi(-6), 2.0_f64.powi(-8)] {
                match lyapunov_check(
                    &SchemeSpec::lie_trotter(map),
                    &prm(u, 1.0),
                    tau,
                    &states,
                    100_000,
                    &SeedPolicy::new(505),
                ) {
                    Ok(r) => {
                        for o in r {
                            pass &= o.pass;
                            min_margin = min_margin.min(o.margin);
                            checked += 1;
                        }
                    }
                    Err(_) => pass = false,
                }
            }
        }
    }
    outcome(pass, format!("{checked} state/parameter combinations, smallest margin {min_margin:.3e}"))
}

fn conformal_symplecticity() -> Outcome {
    let m = prm(2.0, 1.0);
    let tau = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let states: Vec<State> =
        (0..1000).map(|_| State::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
    let draws: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
    let expected = (-m.upsilon * tau).exp();
    let det_err = match step_jacobians(ConservativeMap::SymplecticEuler, &m, tau, &states, &draws) {
        Ok(d) => d.iter().map(|x| ((x - expected) / expected).abs()).fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    let spec = SchemeSpec::lie_trotter(ConservativeMap::SymplecticEuler);
    let ratio = match phase_area(&spec, &m, tau, 1.0, 10_000, 607, 10_000) {
        Ok(curve) => curve.last().map_or(f64::NAN, |c| c.1) / std::f64::consts::PI,
        Err(_) => f64::NAN,
    };
    let e2 = (-2.0_f64).exp();
    let pass = det_err <= 1e-6 && ratio >= 0.999 * e2 && ratio <= 1.001 * e2;
    outcome(
        pass,
        format!(
            "max relative det error {det_err:.2e}; area(1)/pi {ratio:.6} vs e^-2 {e2:.6} ({:+.2e} relative)",
            ratio / e2 - 1.0
        ),
    )
}

/// `E[q²]` under `∝ exp(-c q⁴)` is `Γ(3/4) / (Γ(1/4) √c)`.
fn gibbs_eq2(u: f64, s: f64) -> f64 {
    let c = u / (2.0 * s * s);
    gamma(0.75) / (gamma(0.25) * c.sqrt())
}

fn ergodic_limits() -> Outcome {
    let m = prm(15.0, 1.0);
    let e = ErgodicExperiment {
        spec: SchemeSpec::lie_trotter(ConservativeMap::Avf),
        prm: m,
        tau: 2.0_f64.powi(-8),
        horizon: 512.0,
        burn_in: 64.0,
        n_paths: 100,
        seeds: SeedPolicy::new(707),
        workers: 0,
    };
    let target = 1.0 / 30.0;
    let (Ok(a), Ok(b)) =
        (e.averages(State::ORIGIN, &[p_squared, q_fourth]), e.averages(State::new(2.0, 2.0), &[p_squared, q_fourth]))
    else {
        return outcome(false, "simulation failed".into());
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, name) in ["p^2", "q^4"].iter().enumerate() {
        let rel = (a[k].mean / target - 1.0).abs();
        let gap = (a[k].mean - b[k].mean).abs();
        let band = 3.0 * (a[k].std_error.powi(2) + b[k].std_error.powi(2)).sqrt();
        pass &= rel <= 0.05 && gap <= band;
        parts.push(format!(
            "{name}: {:.5} ({:+.2}% vs 1/30), from (2,2) {:.5}, gap {gap:.1e} vs 3SE {band:.1e}",
            a[k].mean,
            100.0 * (a[k].mean / target - 1.0),
            b[k].mean
        ));
    }
    outcome(pass, parts.join("; "))
}

fn distribution_convergence() -> Outcome {
    let m = prm(15.0, 1.0);
    let spec = SchemeSpec::lie_trotter(ConservativeMap::Avf);
    let snaps = match ensemble_snapshots(
        &spec,
        &m,
        2.0_f64.powi(-8),
        State::ORIGIN,
        &[0.0, 2.0, 256.0],
        5000,
        &SeedPolicy::new(808),
        0,
    ) {
        Ok(s) => s,
        Err(err) => return outcome(false, err.to_string()),
    };
    let d: Vec<f64> = snaps
        .iter()
        .map(|s| {
            empirical_distribution(s, (-1.0, 1.0), (-1.5, 1.5), 40, 40)
                .and_then(|h| distribution_distance(&h, &m))
                .unwrap_or(f64::NAN)
        })
        .collect();
    let pass = d[0] > d[1] && d[1] > d[2] && d[2] < 0.15;
    outcome(pass, format!("L1 at t=0,2,256: {:.4}, {:.4}, {:.4}", d[0], d[1], d[2]))
}

fn exponential_integrability() -> Outcome {
    let m = prm(10.0, 1.0);
    let spec = SchemeSpec::lie_trotter(ConservativeMap::Avf);
    let mut pass = true;
    let mut largest_log: f64 = f64::NEG_INFINITY;
    let mut envelope = 0.0;
    let mut overflows = 0;
    for seed in 0..20 {
        match exp_moment_monitor(
            &spec,
            &m,
            2.0_f64.powi(-10),
            1.0,
            State::new(1.0, 1.0),
            10_000,
            &SeedPolicy::new(900 + seed),
            0,
        ) {
            Ok(r) => {
                pass &= r.within_envelope();
                overflows += r.overflow as usize;
                largest_log = r.log_estimates.iter().copied().fold(largest_log, f64::max);
                envelope = r.log_envelope;
            }
            Err(_) => pass = false,
        }
    }
    outcome(
        pass,
        format!("largest log-estimate {largest_log:.4} vs log-envelope {envelope:.1}; {overflows} overflow flags in 20 seeds"),
    )
}

fn naive_non_dissipation() -> Outcome {
    let m = prm(10.0, 1.0);
    let s0 = State::new(0.0, 2.0);
    let h0 = 4.0;
    let c = match h0_dissipation_compare(&m, 2.0_f64.powi(-10), 1.0, s0, 10_000, &SeedPolicy::new(1010), 0) {
        Ok(c) => c,
        Err(err) => return outcome(false, err.to_string()),
    };
    let naive_ok = c.naive.iter().all(|e| e.mean + 3.0 * e.std_error >= h0);
    let at = c.times.iter().position(|&t| t >= 0.2 - 1e-12).unwrap_or(c.times.len() - 1);
    let split = c.split[at].mean;
    outcome(
        naive_ok && split < 0.5 * h0,
        format!(
            "naive min E[H0] {:.4} (>= 4 within 3SE: {naive_ok}); split E[H0](0.2) {split:.4}",
            c.naive.iter().map(|e| e.mean).fold(f64::INFINITY, f64::min)
        ),
    )
}

fn msd_equilibrium() -> Outcome {
    let (u, s) = (15.0, 1.0);
    let m = prm(u, s);
    let spec = SchemeSpec::lie_trotter(ConservativeMap::Avf);
    let curve =
        match msd_ensemble(&spec, &m, 2.0_f64.powi(-8), 512.0, State::ORIGIN, 4, 1000, &SeedPolicy::new(1111), 0) {
            Ok(c) => c,
            Err(err) => return outcome(false, err.to_string()),
        };
    let target = s * s / (2.0 * u) + gibbs_eq2(u, s);
    let plateau = curve.plateau();
    let rel = plateau / target - 1.0;
    match curve.relaxation_fit(2.0) {
        Ok(fit) => outcome(
            rel.abs() <= 0.05 && fit.slope < 0.0 && fit.r_squared > 0.9,
            format!(
                "plateau {plateau:.5} vs {target:.5} ({:+.2}%); relaxation slope {:.4}, r2 {:.4}",
                100.0 * rel,
                fit.slope,
                fit.r_squared
            ),
        ),
        Err(err) => outcome(false, format!("plateau {plateau:.5} vs {target:.5}; fit failed: {err}")),
    }
}

fn long_time_stability() -> Outcome {
    let mut e = convergence_setup(
        SchemeSpec::lie_trotter(ConservativeMap::Avf),
        vec![2.0_f64.powi(-8)],
        2.0_f64.powi(-11),
        200,
        1212,
    );
    e.horizon = 100.0;
    let curve = match e.strong_error_curve(0.5) {
        Ok(c) => c,
        Err(err) => return outcome(false, err.to_string()),
    };
    let window_mean = |lo: f64, hi: f64| {
        let v: Vec<f64> = curve.iter().filter(|(t, _)| *t >= lo && *t <= hi).map(|(_, e)| e.mean).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let first = window_mean(0.0, 10.0);
    let last = window_mean(90.0, 100.0);
    outcome(last <= 2.0 * first, format!("mean error over [0,10] {first:.3e}, over [90,100] {last:.3e}"))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("strong order 1 of SAVF/SDG/SPAVF", strong_order),
        ("weak order 1 of SAVF/SDG/SPAVF", weak_order),
        ("weak order 2 of Strang SAVF", strang_weak_order),
        ("exact energy conservation of the deterministic maps", energy_conservation),
        ("one-step Lyapunov inequality", lyapunov),
        ("conformal symplecticity and phase-space area", conformal_symplecticity),
        ("ergodic limits of p^2 and q^4", ergodic_limits),
        ("empirical distribution convergence", distribution_convergence),
        ("exponential integrability envelope", exponential_integrability),
        ("naive splitting does not dissipate H0", naive_non_dissipation),
        ("MSD equilibrium", msd_equilibrium),
        ("long-time strong error stability", long_time_stability),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, (title, run)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} {title}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
