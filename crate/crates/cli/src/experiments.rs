//! Experiment recipes. Each writes its CSV tables into the output directory
//! and returns the summary.
//!
//! | experiment | file | columns |
//! |---|---|---|
//! | simulate | `trajectory.csv` | `t,p,q` |
//! | strong-order | `strong_order.csv` | `tau,error,std_error` |
//! | weak-order | `weak_order.csv` | `tau,error,std_error` |
//! | long-time-error | `long_time_error.csv` | `t,error,std_error` |
//! | ergodic-average | `ergodic_average.csv` | `observable,initial_p,initial_q,mean,std_error,target` |
//! | histogram | `histogram_<k>.csv`, `distances.csv` | `p_lo,p_hi,q_lo,q_hi,mass`; `t,l1_distance` |
//! | msd | `msd.csv` | `t,msd,std_error` |
//! | exp-moment | `exp_moment.csv` | `t,estimate,log_estimate,std_error,max_exponent` |
//! | lyapunov | `lyapunov.csv` | `p,q,lhs,lhs_std_error,rhs,margin,pass` |
//! | jacobian | `jacobian.csv` | `p,q,z,det,expected,rel_error` |
//! | phase-area | `phase_area.csv` | `t,area,expected` |
//! | dissipation-demo | `dissipation.csv` | `t,naive_mean,naive_std_error,split_mean,split_std_error` |

use std::path::Path;

use langevin_splitting::analysis::{
    self, distribution_distance, empirical_distribution, ensemble_snapshots, exp_moment_monitor,
    h0_dissipation_compare, lyapunov_check, msd_ensemble, phase_area, ErgodicExperiment, ErrorExperiment, ErrorStudy,
};
use langevin_splitting::model::gibbs_moments;
use langevin_splitting::splitting::simulate;
use langevin_splitting::{Composition, PhysParams, SchemeSpec, SeedPolicy, SolverSettings, State};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{ObservableKind, RunConfig};
use crate::output::{write_csv, Check, Summary, Table};
use crate::CliError;

fn spec(cfg: &RunConfig) -> SchemeSpec {
    SchemeSpec {
        map: cfg.scheme,
        composition: cfg.composition,
        solver: SolverSettings { rel_tol: cfg.rel_tol, abs_tol: cfg.abs_tol, max_iter: cfg.max_iter, fallback: true },
    }
}

fn params(cfg: &RunConfig) -> Result<PhysParams, CliError> {
    Ok(PhysParams::new(cfg.upsilon, cfg.sigma)?)
}

fn state(xy: [f64; 2]) -> State {
    State::new(xy[0], xy[1])
}

fn seeds(cfg: &RunConfig) -> SeedPolicy {
    SeedPolicy::new(cfg.seed)
}

pub fn run(cfg: &RunConfig, dir: &Path) -> Result<Summary, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut s = Summary::new(cfg);
    match cfg.experiment.as_str() {
        "simulate" => simulate_path(cfg, dir, &mut s)?,
        "strong-order" => strong_order(cfg, dir, &mut s)?,
        "weak-order" => weak_order(cfg, dir, &mut s)?,
        "long-time-error" => long_time_error(cfg, dir, &mut s)?,
        "ergodic-average" => ergodic_average(cfg, dir, &mut s)?,
        "histogram" => histogram(cfg, dir, &mut s)?,
        "msd" => msd(cfg, dir, &mut s)?,
        "exp-moment" => exp_moment(cfg, dir, &mut s)?,
        "lyapunov" => lyapunov(cfg, dir, &mut s)?,
        "jacobian" => jacobian(cfg, dir, &mut s)?,
        "phase-area" => area(cfg, dir, &mut s)?,
        "dissipation-demo" => dissipation(cfg, dir, &mut s)?,
        other => return Err(CliError::UnknownExperiment(other.to_string())),
    }
    Ok(s)
}

fn simulate_path(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let path = simulate(state(cfg.initial), cfg.horizon, cfg.tau, &params(cfg)?, &spec(cfg), seeds(cfg).path_seed(0))?;
    let mut t = Table::new(&["t", "p", "q"]);
    for (time, x) in path.times.iter().zip(&path.states) {
        t.push(vec![(*time).into(), x.p.into(), x.q.into()]);
    }
    s.metric("steps", path.states.len() - 1);
    s.metric("terminal", [path.terminal().p, path.terminal().q]);
    s.file(write_csv(dir, "trajectory.csv", cfg, &t)?);
    Ok(())
}

fn error_experiment(cfg: &RunConfig) -> Result<ErrorExperiment, CliError> {
    Ok(ErrorExperiment {
        spec: spec(cfg),
        prm: params(cfg)?,
        initial: state(cfg.initial),
        horizon: cfg.horizon,
        taus: cfg.taus.clone(),
        fine_dt: cfg.fine_dt,
        n_paths: cfg.n_paths,
        seeds: seeds(cfg),
        workers: cfg.workers,
    })
}

fn order_table(study: &ErrorStudy) -> Table {
    let mut t = Table::new(&["tau", "error", "std_error"]);
    for l in &study.levels {
        t.push(vec![l.tau.into(), l.error.into(), l.std_error.into()]);
    }
    t
}

fn record_fit(s: &mut Summary, study: &ErrorStudy, lo: f64, hi: f64) {
    match study.fit() {
        Ok(fit) => {
            s.metric("slope", fit.slope);
            s.metric("intercept", fit.intercept);
            s.metric("r_squared", fit.r_squared);
            s.checks.push(Check::within("slope", fit.slope, lo, hi));
        }
        Err(e) => {
            s.metric("fit_error", e.to_string());
            s.checks.push(Check { name: "slope".into(), pass: false, margin: f64::NAN });
        }
    }
}

fn strong_order(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let study = error_experiment(cfg)?.strong_error()?;
    s.file(write_csv(dir, "strong_order.csv", cfg, &order_table(&study))?);
    record_fit(s, &study, 0.85, 1.15);
    Ok(())
}

fn weak_order(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let g = match cfg.observable {
        ObservableKind::SinProduct => analysis::sin_product,
        ObservableKind::SinRadius => analysis::sin_radius,
    };
    let study = error_experiment(cfg)?.weak_error(g)?;
    s.file(write_csv(dir, "weak_order.csv", cfg, &order_table(&study))?);
    match cfg.composition {
        Composition::LieTrotter => record_fit(s, &study, 0.8, 1.2),
        Composition::Strang => record_fit(s, &study, 1.7, 2.3),
    }
    Ok(())
}

fn long_time_error(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let curve = error_experiment(cfg)?.strong_error_curve(cfg.sample_dt)?;
    let mut t = Table::new(&["t", "error", "std_error"]);
    for (time, e) in &curve {
        t.push(vec![(*time).into(), e.mean.into(), e.std_error.into()]);
    }
    s.file(write_csv(dir, "long_time_error.csv", cfg, &t)?);
    let decade = cfg.horizon / 10.0;
    let mean_over = |lo: f64, hi: f64| {
        let v: Vec<f64> = curve.iter().filter(|(t, _)| *t >= lo && *t <= hi).map(|(_, e)| e.mean).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let first = mean_over(0.0, decade);
    let last = mean_over(cfg.horizon - decade, cfg.horizon);
    s.metric("first_decade_mean", first);
    s.metric("final_decade_mean", last);
    s.checks.push(Check::at_most("final_decade_vs_first", last, 2.0 * first));
    Ok(())
}

fn ergodic_average(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let prm = params(cfg)?;
    let e = ErgodicExperiment {
        spec: spec(cfg),
        prm,
        tau: cfg.tau,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        n_paths: cfg.n_paths,
        seeds: seeds(cfg),
        workers: cfg.workers,
    };
    let moments = gibbs_moments(&prm)?;
    type Observable = (&'static str, fn(State) -> f64, f64);
    let observables: [Observable; 2] =
        [("p^2", analysis::p_squared, moments.ep2), ("q^4", analysis::q_fourth, moments.eq4)];
    let fns: Vec<fn(State) -> f64> = observables.iter().map(|o| o.1).collect();
    let a = e.averages(state(cfg.initial), &fns)?;
    let b = e.averages(state(cfg.alt_initial), &fns)?;
    let mut t = Table::new(&["observable", "initial_p", "initial_q", "mean", "std_error", "target"]);
    for (k, (name, _, target)) in observables.iter().enumerate() {
        for (init, est) in [(cfg.initial, &a[k]), (cfg.alt_initial, &b[k])] {
            t.push(vec![
                (*name).into(),
                init[0].into(),
                init[1].into(),
                est.mean.into(),
                est.std_error.into(),
                (*target).into(),
            ]);
        }
        let rel = (a[k].mean / target - 1.0).abs();
        s.metric(&format!("{name}_relative_error"), rel);
        s.checks.push(Check::at_most(&format!("{name}_within_5_percent"), rel, 0.05));
        let band = 3.0 * (a[k].std_error.powi(2) + b[k].std_error.powi(2)).sqrt();
        s.checks.push(Check::at_most(&format!("{name}_initial_independence"), (a[k].mean - b[k].mean).abs(), band));
    }
    s.file(write_csv(dir, "ergodic_average.csv", cfg, &t)?);
    Ok(())
}

fn histogram(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let prm = params(cfg)?;
    let snaps = ensemble_snapshots(
        &spec(cfg),
        &prm,
        cfg.tau,
        state(cfg.initial),
        &cfg.times,
        cfg.n_paths,
        &seeds(cfg),
        cfg.workers,
    )?;
    let mut distances = Table::new(&["t", "l1_distance"]);
    let mut d = Vec::new();
    for (k, (states, &time)) in snaps.iter().zip(&cfg.times).enumerate() {
        let h = empirical_distribution(
            states,
            (cfg.p_range[0], cfg.p_range[1]),
            (cfg.q_range[0], cfg.q_range[1]),
            cfg.bins[0],
            cfg.bins[1],
        )?;
        let mut t = Table::new(&["p_lo", "p_hi", "q_lo", "q_hi", "mass"]);
        for i in 0..h.n_p {
            for j in 0..h.n_q {
                let (p_lo, p_hi) = h.p_edges(i);
                let (q_lo, q_hi) = h.q_edges(j);
                t.push(vec![p_lo.into(), p_hi.into(), q_lo.into(), q_hi.into(), h.mass(i, j).into()]);
            }
        }
        s.file(write_csv(dir, &format!("histogram_{k}.csv"), cfg, &t)?);
        let dist = distribution_distance(&h, &prm)?;
        distances.push(vec![time.into(), dist.into()]);
        d.push(dist);
    }
    s.file(write_csv(dir, "distances.csv", cfg, &distances)?);
    s.metric("l1_distances", &d);
    let decreasing = d.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    s.checks.push(Check { name: "strictly_decreasing".into(), pass: decreasing > 0.0, margin: decreasing });
    if let Some(&last) = d.last() {
        s.checks.push(Check::at_most("final_distance", last, 0.15));
    }
    Ok(())
}

fn msd(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let prm = params(cfg)?;
    let curve = msd_ensemble(
        &spec(cfg),
        &prm,
        cfg.tau,
        cfg.horizon,
        state(cfg.initial),
        cfg.stride,
        cfg.n_paths,
        &seeds(cfg),
        cfg.workers,
    )?;
    let mut t = Table::new(&["t", "msd", "std_error"]);
    for k in 0..curve.times.len() {
        t.push(vec![curve.times[k].into(), curve.msd[k].into(), curve.std_error[k].into()]);
    }
    s.file(write_csv(dir, "msd.csv", cfg, &t)?);
    let plateau = curve.plateau();
    s.metric("plateau", plateau);
    let m = gibbs_moments(&prm)?;
    if state(cfg.initial) == State::ORIGIN {
        let target = m.ep2 + m.eq2;
        s.metric("plateau_target", target);
        s.checks.push(Check::at_most("plateau_within_5_percent", (plateau / target - 1.0).abs(), 0.05));
    }
    match curve.relaxation_fit(cfg.fit_window) {
        Ok(fit) => {
            s.metric("relaxation_slope", fit.slope);
            s.metric("relaxation_r_squared", fit.r_squared);
            s.checks.push(Check::at_most("relaxation_slope_negative", fit.slope, 0.0));
            s.checks.push(Check {
                name: "relaxation_r_squared".into(),
                pass: fit.r_squared > 0.9,
                margin: fit.r_squared - 0.9,
            });
        }
        Err(e) => s.metric("relaxation_fit_error", e.to_string()),
    }
    Ok(())
}

fn exp_moment(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let r = exp_moment_monitor(
        &spec(cfg),
        &params(cfg)?,
        cfg.tau,
        cfg.horizon,
        state(cfg.initial),
        cfg.n_paths,
        &seeds(cfg),
        cfg.workers,
    )?;
    let mut t = Table::new(&["t", "estimate", "log_estimate", "std_error", "max_exponent"]);
    for k in (0..r.times.len()).step_by(cfg.stride.max(1)) {
        t.push(vec![
            r.times[k].into(),
            r.estimates[k].into(),
            r.log_estimates[k].into(),
            r.std_errors[k].into(),
            r.max_exponents[k].into(),
        ]);
    }
    s.file(write_csv(dir, "exp_moment.csv", cfg, &t)?);
    let largest = r.log_estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    s.metric("log_envelope", r.log_envelope);
    s.metric("largest_log_estimate", largest);
    s.metric("overflow", r.overflow);
    s.checks.push(Check {
        name: "within_envelope".into(),
        pass: r.within_envelope(),
        margin: r.log_envelope - largest,
    });
    Ok(())
}

fn lyapunov(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let states: Vec<State> = cfg.states.iter().copied().map(state).collect();
    let r = lyapunov_check(&spec(cfg), &params(cfg)?, cfg.tau, &states, cfg.n_draws, &seeds(cfg))?;
    let mut t = Table::new(&["p", "q", "lhs", "lhs_std_error", "rhs", "margin", "pass"]);
    for o in &r {
        t.push(vec![
            o.state.p.into(),
            o.state.q.into(),
            o.lhs.mean.into(),
            o.lhs.std_error.into(),
            o.rhs.into(),
            o.margin.into(),
            o.pass.into(),
        ]);
        s.checks.push(Check {
            name: format!("lyapunov({}, {})", o.state.p, o.state.q),
            pass: o.pass,
            margin: o.margin,
        });
    }
    s.file(write_csv(dir, "lyapunov.csv", cfg, &t)?);
    Ok(())
}

fn jacobian(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let prm = params(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds(cfg).path_seed(0));
    let states: Vec<State> =
        (0..cfg.n_paths).map(|_| State::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
    let draws: Vec<f64> = (0..cfg.n_draws).map(|_| rng.sample(StandardNormal)).collect();
    let dets = analysis::step_jacobians(cfg.scheme, &prm, cfg.tau, &states, &draws)?;
    let expected = (-cfg.upsilon * cfg.tau).exp();
    let mut t = Table::new(&["p", "q", "z", "det", "expected", "rel_error"]);
    let mut worst: f64 = 0.0;
    for (k, det) in dets.iter().enumerate() {
        let (x, z) = (states[k / draws.len()], draws[k % draws.len()]);
        let rel = ((det - expected) / expected).abs();
        worst = worst.max(rel);
        t.push(vec![x.p.into(), x.q.into(), z.into(), (*det).into(), expected.into(), rel.into()]);
    }
    s.file(write_csv(dir, "jacobian.csv", cfg, &t)?);
    s.metric("max_relative_error", worst);
    s.checks.push(Check::at_most("determinant_within_1e-6", worst, 1e-6));
    Ok(())
}

fn area(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let curve = phase_area(
        &spec(cfg),
        &params(cfg)?,
        cfg.tau,
        cfg.horizon,
        cfg.n_vertices,
        seeds(cfg).path_seed(0),
        cfg.stride,
    )?;
    let mut t = Table::new(&["t", "area", "expected"]);
    for &(time, a) in &curve {
        t.push(vec![time.into(), a.into(), (std::f64::consts::PI * (-cfg.upsilon * time).exp()).into()]);
    }
    s.file(write_csv(dir, "phase_area.csv", cfg, &t)?);
    if let Some(&(time, a)) = curve.last() {
        let ratio = a / (std::f64::consts::PI * (-cfg.upsilon * time).exp());
        s.metric("final_area", a);
        s.metric("final_ratio", ratio);
        s.checks.push(Check::within("final_area_ratio", ratio, 0.999, 1.001));
    }
    Ok(())
}

fn dissipation(cfg: &RunConfig, dir: &Path, s: &mut Summary) -> Result<(), CliError> {
    let x0 = state(cfg.initial);
    let c = h0_dissipation_compare(&params(cfg)?, cfg.tau, cfg.horizon, x0, cfg.n_paths, &seeds(cfg), cfg.workers)?;
    let mut t = Table::new(&["t", "naive_mean", "naive_std_error", "split_mean", "split_std_error"]);
    for k in (0..c.times.len()).step_by(cfg.stride.max(1)) {
        t.push(vec![
            c.times[k].into(),
            c.naive[k].mean.into(),
            c.naive[k].std_error.into(),
            c.split[k].mean.into(),
            c.split[k].std_error.into(),
        ]);
    }
    s.file(write_csv(dir, "dissipation.csv", cfg, &t)?);
    let h0 = langevin_splitting::energy_h0(x0);
    let naive_gap = c.naive.iter().map(|e| e.mean + 3.0 * e.std_error - h0).fold(f64::INFINITY, f64::min);
    s.metric("initial_h0", h0);
    s.metric("naive_final", c.naive.last().map(|e| e.mean));
    s.metric("split_final", c.split.last().map(|e| e.mean));
    s.checks.push(Check { name: "naive_never_below_initial".into(), pass: naive_gap >= 0.0, margin: naive_gap });
    Ok(())
}
