//! Measurements: convergence orders, ergodic averages, empirical
//! distributions, mean square displacement, exponential moments and the
//! structure diagnostics (Jacobian determinant, phase-space area, energy
//! dissipation of the stochastic sub-step).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detflow::ConservativeMap;
use crate::error::{Error, Result};
use crate::model::{energy_h, energy_h0, momentum_mass, EnergyConstants, PhysParams, PositionMarginal, State};
use crate::montecarlo::{
    fold_paths, generate_grid, map_paths, Accumulator, Estimate, Moments, PathContext, SeedPolicy,
};
use crate::splitting::{simulate, step_count, Integrator, SchemeSpec, Trajectory};
use crate::stochflow::{naive_substep_exact, ou_substep_exact};

/// `sin(p) sin(q)`.
pub fn sin_product(s: State) -> f64 {
    s.p.sin() * s.q.sin()
}

/// `sin(√(p² + q²))`.
pub fn sin_radius(s: State) -> f64 {
    s.norm().sin()
}

pub fn p_squared(s: State) -> f64 {
    s.p * s.p
}

pub fn q_fourth(s: State) -> f64 {
    s.q.powi(4)
}

/// Least-squares line through `(x, y)` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> LineFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LineFit { slope, intercept: my - slope * mx, r_squared }
}

/// Log-log least-squares fit of error against step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub levels: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_order(levels: &[(f64, f64)]) -> Result<OrderFit> {
    if levels.len() < 3 {
        return Err(Error::TooFewLevels(levels.len()));
    }
    if let Some(&(tau, error)) = levels.iter().find(|l| !(l.1 > 0.0 && l.0 > 0.0)) {
        return Err(Error::NonPositiveError { tau, error });
    }
    let logs: Vec<(f64, f64)> = levels.iter().map(|&(t, e)| (t.ln(), e.ln())).collect();
    let line = fit_line(&logs);
    Ok(OrderFit { levels: levels.to_vec(), slope: line.slope, intercept: line.intercept, r_squared: line.r_squared })
}

/// Setup shared by the convergence experiments: every path draws one fine
/// Brownian grid that drives the reference solution and all coarse levels.
#[derive(Debug, Clone)]
pub struct ErrorExperiment {
    pub spec: SchemeSpec,
    pub prm: PhysParams,
    pub initial: State,
    pub horizon: f64,
    pub taus: Vec<f64>,
    pub fine_dt: f64,
    pub n_paths: usize,
    pub seeds: SeedPolicy,
    pub workers: usize,
}

/// Error estimate at one step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorLevel {
    pub tau: f64,
    pub error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStudy {
    pub levels: Vec<ErrorLevel>,
    pub n_paths: usize,
}

impl ErrorStudy {
    pub fn fit(&self) -> Result<OrderFit> {
        fit_order(&self.levels.iter().map(|l| (l.tau, l.error)).collect::<Vec<_>>())
    }
}

impl ErrorExperiment {
    fn check(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::TooFewPaths(self.n_paths));
        }
        step_count(self.horizon, self.fine_dt)?;
        for &tau in &self.taus {
            step_count(self.horizon, tau)?;
            crate::stochflow::CoupledKernel::new(tau, self.fine_dt, &self.prm)?;
        }
        Ok(())
    }

    /// Terminal states of the reference and of every level on one path.
    fn terminal_states(&self, ctx: PathContext) -> Result<(State, Vec<State>)> {
        let grid = generate_grid(self.horizon, self.fine_dt, ctx.seed)?;
        let reference = Integrator::coupled(self.spec, self.prm, self.fine_dt, self.fine_dt)?.evolve_on_grid(
            self.initial,
            &grid,
            |_, _| {},
        )?;
        let levels = self
            .taus
            .iter()
            .map(|&tau| {
                Integrator::coupled(self.spec, self.prm, tau, self.fine_dt)?.evolve_on_grid(
                    self.initial,
                    &grid,
                    |_, _| {},
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((reference, levels))
    }

    fn reduce(&self, per_path: impl Fn(State, &[State]) -> Vec<f64> + Sync + Send) -> Result<Moments> {
        self.check()?;
        let dim = self.taus.len();
        fold_paths(
            self.n_paths,
            &self.seeds,
            self.workers,
            || Moments::new(dim),
            |acc, ctx| {
                let (reference, levels) = self.terminal_states(ctx)?;
                acc.push(&per_path(reference, &levels));
                Ok(())
            },
        )
    }

    /// Root-mean-square terminal error `√E|X_N - X_ref|²` per level.
    ///
    /// The standard error follows from the delta method applied to the
    /// mean squared error.
    pub fn strong_error(&self) -> Result<ErrorStudy> {
        let m = self.reduce(|r, levels| levels.iter().map(|x| x.distance_sq(&r)).collect())?;
        let levels = self
            .taus
            .iter()
            .zip(m.estimates())
            .map(|(&tau, e)| {
                let error = e.mean.max(0.0).sqrt();
                let std_error = if error > 0.0 { e.std_error / (2.0 * error) } else { 0.0 };
                ErrorLevel { tau, error, std_error }
            })
            .collect();
        Ok(ErrorStudy { levels, n_paths: self.n_paths })
    }

    /// `|E[g(X_N) - g(X_ref)]|` per level, estimated on coupled paths.
    pub fn weak_error(&self, g: impl Fn(State) -> f64 + Sync + Send) -> Result<ErrorStudy> {
        let m = self.reduce(|r, levels| {
            let gr = g(r);
            levels.iter().map(|&x| g(x) - gr).collect()
        })?;
        let levels = self
            .taus
            .iter()
            .zip(m.estimates())
            .map(|(&tau, e)| ErrorLevel { tau, error: e.mean.abs(), std_error: e.std_error })
            .collect();
        Ok(ErrorStudy { levels, n_paths: self.n_paths })
    }

    /// Root-mean-square error of the first level against the reference at
    /// the times `k · sample_dt`, for the long-time stability experiment.
    pub fn strong_error_curve(&self, sample_dt: f64) -> Result<Vec<(f64, Estimate)>> {
        self.check()?;
        let tau = *self.taus.first().ok_or(Error::TooFewLevels(0))?;
        let n_samples = step_count(self.horizon, sample_dt)?;
        let every_coarse = step_count(sample_dt, tau)?;
        let every_fine = step_count(sample_dt, self.fine_dt)?;
        let moments = fold_paths(
            self.n_paths,
            &self.seeds,
            self.workers,
            || Moments::new(n_samples + 1),
            |acc, ctx| {
                let grid = generate_grid(self.horizon, self.fine_dt, ctx.seed)?;
                let mut reference = Vec::with_capacity(n_samples + 1);
                Integrator::coupled(self.spec, self.prm, self.fine_dt, self.fine_dt)?.evolve_on_grid(
                    self.initial,
                    &grid,
                    |n, x| {
                        if n % every_fine == 0 {
                            reference.push(x)
                        }
                    },
                )?;
                let mut sq = Vec::with_capacity(n_samples + 1);
                Integrator::coupled(self.spec, self.prm, tau, self.fine_dt)?.evolve_on_grid(
                    self.initial,
                    &grid,
                    |n, x| {
                        if n % every_coarse == 0 {
                            sq.push(x.distance_sq(&reference[sq.len()]))
                        }
                    },
                )?;
                acc.push(&sq);
                Ok(())
            },
        )?;
        Ok(moments
            .estimates()
            .into_iter()
            .enumerate()
            .map(|(k, e)| {
                let rms = e.mean.max(0.0).sqrt();
                let se = if rms > 0.0 { e.std_error / (2.0 * rms) } else { 0.0 };
                (k as f64 * sample_dt, Estimate { mean: rms, std_error: se, std_dev: e.std_dev })
            })
            .collect())
    }
}

/// Left-endpoint time average of `g` over `[burn_in, T)`.
pub fn time_average(trajectory: &Trajectory, g: impl Fn(State) -> f64, burn_in: f64) -> Result<f64> {
    let start = (burn_in / trajectory.tau - 1e-9).ceil().max(0.0) as usize;
    let end = trajectory.states.len().saturating_sub(1);
    if start >= end {
        return Err(Error::EmptyWindow);
    }
    let window = &trajectory.states[start..end];
    Ok(window.iter().map(|&s| g(s)).sum::<f64>() / window.len() as f64)
}

/// Setup of the ergodic-average experiment: one long path per seed.
#[derive(Debug, Clone)]
pub struct ErgodicExperiment {
    pub spec: SchemeSpec,
    pub prm: PhysParams,
    pub tau: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_paths: usize,
    pub seeds: SeedPolicy,
    pub workers: usize,
}

impl ErgodicExperiment {
    /// Across-seed mean and standard error of the time average of each observable.
    pub fn averages(&self, initial: State, observables: &[fn(State) -> f64]) -> Result<Vec<Estimate>> {
        if self.n_paths < 2 {
            return Err(Error::TooFewPaths(self.n_paths));
        }
        let dim = observables.len();
        let m = fold_paths(
            self.n_paths,
            &self.seeds,
            self.workers,
            || Moments::new(dim),
            |acc, ctx| {
                let path = simulate(initial, self.horizon, self.tau, &self.prm, &self.spec, ctx.seed)?;
                let avgs =
                    observables.iter().map(|g| time_average(&path, g, self.burn_in)).collect::<Result<Vec<_>>>()?;
                acc.push(&avgs);
                Ok(())
            },
        )?;
        Ok(m.estimates())
    }
}

/// Counts on a uniform `n_p × n_q` grid; samples outside the grid are
/// counted separately so that `Σ counts + outside = total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub p_range: (f64, f64),
    pub q_range: (f64, f64),
    pub n_p: usize,
    pub n_q: usize,
    /// Row-major by momentum bin.
    pub counts: Vec<u64>,
    pub outside: u64,
    pub total: u64,
}

impl Histogram2D {
    pub fn new(p_range: (f64, f64), q_range: (f64, f64), n_p: usize, n_q: usize) -> Result<Self> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 < r.1;
        if !ok(p_range) || !ok(q_range) || n_p == 0 || n_q == 0 {
            return Err(Error::DegenerateRange);
        }
        Ok(Histogram2D { p_range, q_range, n_p, n_q, counts: vec![0; n_p * n_q], outside: 0, total: 0 })
    }

    fn bin(lo: f64, hi: f64, n: usize, x: f64) -> Option<usize> {
        // the upper edge belongs to the last bin
        if !(x >= lo && x <= hi) {
            return None;
        }
        Some((((x - lo) / (hi - lo) * n as f64) as usize).min(n - 1))
    }

    pub fn add(&mut self, s: State) {
        self.total += 1;
        let bp = Self::bin(self.p_range.0, self.p_range.1, self.n_p, s.p);
        let bq = Self::bin(self.q_range.0, self.q_range.1, self.n_q, s.q);
        match (bp, bq) {
            (Some(i), Some(j)) => self.counts[i * self.n_q + j] += 1,
            _ => self.outside += 1,
        }
    }

    pub fn p_edges(&self, i: usize) -> (f64, f64) {
        edges(self.p_range, self.n_p, i)
    }

    pub fn q_edges(&self, j: usize) -> (f64, f64) {
        edges(self.q_range, self.n_q, j)
    }

    pub fn bin_area(&self) -> f64 {
        (self.p_range.1 - self.p_range.0) / self.n_p as f64 * (self.q_range.1 - self.q_range.0) / self.n_q as f64
    }

    /// Fraction of all samples in bin `(i, j)`.
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.n_q + j] as f64 / self.total as f64
    }

    pub fn density(&self, i: usize, j: usize) -> f64 {
        self.mass(i, j) / self.bin_area()
    }

    pub fn outside_mass(&self) -> f64 {
        self.outside as f64 / self.total as f64
    }
}

fn edges(range: (f64, f64), n: usize, i: usize) -> (f64, f64) {
    let w = (range.1 - range.0) / n as f64;
    (range.0 + i as f64 * w, if i + 1 == n { range.1 } else { range.0 + (i + 1) as f64 * w })
}

pub fn empirical_distribution(
    states: &[State],
    p_range: (f64, f64),
    q_range: (f64, f64),
    n_p: usize,
    n_q: usize,
) -> Result<Histogram2D> {
    if states.is_empty() {
        return Err(Error::TooFewPaths(0));
    }
    let mut h = Histogram2D::new(p_range, q_range, n_p, n_q)?;
    states.iter().for_each(|&s| h.add(s));
    Ok(h)
}

/// Gibbs probability of every bin, row-major like [`Histogram2D::counts`].
pub fn reference_masses(h: &Histogram2D, prm: &PhysParams) -> Result<Vec<f64>> {
    // the density factorises into a Gaussian in p and a quartic marginal in q
    let marginal = PositionMarginal::new(prm)?;
    let mp: Vec<f64> = (0..h.n_p)
        .map(|i| {
            let (lo, hi) = h.p_edges(i);
            momentum_mass(prm, lo, hi)
        })
        .collect();
    let mq = (0..h.n_q)
        .map(|j| {
            let (lo, hi) = h.q_edges(j);
            marginal.mass(lo, hi)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mp.iter().flat_map(|a| mq.iter().map(move |b| a * b)).collect())
}

/// L1 distance between the histogram and the Gibbs distribution, counting
/// the mass outside the grid as one extra cell.
pub fn distribution_distance(h: &Histogram2D, prm: &PhysParams) -> Result<f64> {
    if h.total == 0 {
        return Err(Error::TooFewPaths(0));
    }
    let reference = reference_masses(h, prm)?;
    let inside: f64 = reference.iter().sum();
    let grid: f64 = reference.iter().enumerate().map(|(k, r)| (h.counts[k] as f64 / h.total as f64 - r).abs()).sum();
    Ok(grid + (h.outside_mass() - (1.0 - inside)).abs())
}

/// States of every path at the requested times (each a multiple of `τ`).
#[allow(clippy::too_many_arguments)]
pub fn ensemble_snapshots(
    spec: &SchemeSpec,
    prm: &PhysParams,
    tau: f64,
    initial: State,
    times: &[f64],
    n_paths: usize,
    seeds: &SeedPolicy,
    workers: usize,
) -> Result<Vec<Vec<State>>> {
    let steps = times.iter().map(|&t| step_count(t, tau)).collect::<Result<Vec<_>>>()?;
    let last = steps.iter().copied().max().unwrap_or(0);
    let integrator = Integrator::new(*spec, *prm, tau);
    let per_path = map_paths(n_paths, seeds, workers, |ctx| {
        let mut rng = ctx.rng();
        let mut x = initial;
        let mut out = vec![State::ORIGIN; steps.len()];
        for n in 0..=last {
            for (slot, &k) in out.iter_mut().zip(&steps) {
                if k == n {
                    *slot = x;
                }
            }
            if n < last {
                let z: f64 = rng.sample(StandardNormal);
                x = integrator.step_draw(x, z).map_err(|e| Error::StepFailed { step: n, source: Box::new(e) })?;
            }
        }
        Ok(out)
    })?;
    Ok((0..steps.len()).map(|k| per_path.iter().map(|v| v[k]).collect()).collect())
}

/// Ensemble mean square displacement `E|X_n - X_0|²` on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdCurve {
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl MsdCurve {
    /// Mean over the final 10% of the horizon.
    pub fn plateau(&self) -> f64 {
        let t_end = self.times.last().copied().unwrap_or(0.0);
        let tail: Vec<f64> =
            self.times.iter().zip(&self.msd).filter(|(t, _)| **t >= 0.9 * t_end).map(|(_, m)| *m).collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Line fit of `log(MSD(∞) - MSD(t))` against `t` on `[0, t_max]`.
    pub fn relaxation_fit(&self, t_max: f64) -> Result<LineFit> {
        let plateau = self.plateau();
        let mut points = Vec::new();
        for (&t, &m) in self.times.iter().zip(&self.msd).filter(|(t, _)| **t <= t_max) {
            let gap = plateau - m;
            if gap <= 0.0 {
                return Err(Error::NonPositiveError { tau: t, error: gap });
            }
            points.push((t, gap.ln()));
        }
        if points.len() < 3 {
            return Err(Error::TooFewLevels(points.len()));
        }
        Ok(fit_line(&points))
    }
}

/// MSD of a set of trajectories sharing the initial state and time grid.
pub fn msd_curve(trajectories: &[Trajectory]) -> Vec<(f64, f64)> {
    let Some(first) = trajectories.first() else { return Vec::new() };
    let n = trajectories.len() as f64;
    first
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let sum: f64 = trajectories.iter().map(|tr| tr.states[k].distance_sq(&tr.states[0])).sum();
            (t, sum / n)
        })
        .collect()
}

/// Streaming MSD over an ensemble, recorded every `stride` steps.
#[allow(clippy::too_many_arguments)]
pub fn msd_ensemble(
    spec: &SchemeSpec,
    prm: &PhysParams,
    tau: f64,
    horizon: f64,
    initial: State,
    stride: usize,
    n_paths: usize,
    seeds: &SeedPolicy,
    workers: usize,
) -> Result<MsdCurve> {
    let n = step_count(horizon, tau)?;
    let stride = stride.max(1);
    let n_samples = n / stride + 1;
    let integrator = Integrator::new(*spec, *prm, tau);
    let m = fold_paths(
        n_paths,
        seeds,
        workers,
        || Moments::new(n_samples),
        |acc, ctx| {
            let mut rng = ctx.rng();
            let mut x = initial;
            let mut out = Vec::with_capacity(n_samples);
            out.push(0.0);
            for k in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                x = integrator.step_draw(x, z).map_err(|e| Error::StepFailed { step: k, source: Box::new(e) })?;
                if (k + 1) % stride == 0 {
                    out.push(x.distance_sq(&initial));
                }
            }
            out.resize(n_samples, x.distance_sq(&initial));
            acc.push(&out);
            Ok(())
        },
    )?;
    let est = m.estimates();
    Ok(MsdCurve {
        times: (0..n_samples).map(|k| (k * stride) as f64 * tau).collect(),
        msd: est.iter().map(|e| e.mean).collect(),
        std_error: est.iter().map(|e| e.std_error).collect(),
    })
}

/// Log-space accumulator of `exp(x)` across paths, one entry per time.
#[derive(Debug, Clone)]
struct LogSumExp {
    count: usize,
    max: Vec<f64>,
    /// `Σ exp(x - max)`.
    sum: Vec<f64>,
    /// `Σ exp(2(x - max))`.
    sum_sq: Vec<f64>,
    largest: Vec<f64>,
}

impl LogSumExp {
    fn new(dim: usize) -> Self {
        LogSumExp {
            count: 0,
            max: vec![f64::NEG_INFINITY; dim],
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
            largest: vec![f64::NEG_INFINITY; dim],
        }
    }

    fn rescale(sum: &mut f64, sum_sq: &mut f64, from: f64, to: f64) {
        if from == f64::NEG_INFINITY {
            *sum = 0.0;
            *sum_sq = 0.0;
        } else {
            let r = (from - to).exp();
            *sum *= r;
            *sum_sq *= r * r;
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.count += 1;
        for (k, &x) in xs.iter().enumerate() {
            if x > self.max[k] {
                Self::rescale(&mut self.sum[k], &mut self.sum_sq[k], self.max[k], x);
                self.max[k] = x;
            }
            let e = (x - self.max[k]).exp();
            self.sum[k] += e;
            self.sum_sq[k] += e * e;
            self.largest[k] = self.largest[k].max(x);
        }
    }
}

impl Accumulator for LogSumExp {
    fn merge(&mut self, mut later: Self) {
        for k in 0..self.max.len() {
            let m = self.max[k].max(later.max[k]);
            if m == f64::NEG_INFINITY {
                continue;
            }
            Self::rescale(&mut self.sum[k], &mut self.sum_sq[k], self.max[k], m);
            Self::rescale(&mut later.sum[k], &mut later.sum_sq[k], later.max[k], m);
            self.max[k] = m;
            self.sum[k] += later.sum[k];
            self.sum_sq[k] += later.sum_sq[k];
            self.largest[k] = self.largest[k].max(later.largest[k]);
        }
        self.count += later.count;
    }
}

/// Per-step Monte-Carlo estimates of `E[exp(C_e (P_n² + Q_n⁴) e^{-σ² t_n})]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentReport {
    pub times: Vec<f64>,
    /// Sample means; `+∞` where the mean is not representable.
    pub estimates: Vec<f64>,
    /// Natural logarithm of the sample means.
    pub log_estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Largest single-path exponent per step.
    pub max_exponents: Vec<f64>,
    /// `C (T + 1) + H(X_0)`, the logarithm of the envelope.
    pub log_envelope: f64,
    /// Some estimate overflowed `f64` or a path left the finite range.
    pub overflow: bool,
    /// Some estimate exceeded the envelope.
    pub exceeds_envelope: bool,
}

impl ExpMomentReport {
    pub fn within_envelope(&self) -> bool {
        !self.overflow && !self.exceeds_envelope && self.estimates.iter().all(|e| e.is_finite())
    }
}

/// Growth constant `C = υ C_H + σ²/2 + σ² υ⁴ / 64` of the envelope.
pub fn exp_moment_growth(prm: &PhysParams) -> f64 {
    let (u, s2) = (prm.upsilon, prm.sigma * prm.sigma);
    u * EnergyConstants::for_params(prm).c_h + 0.5 * s2 + s2 * u.powi(4) / 64.0
}

#[allow(clippy::too_many_arguments)]
pub fn exp_moment_monitor(
    spec: &SchemeSpec,
    prm: &PhysParams,
    tau: f64,
    horizon: f64,
    initial: State,
    n_paths: usize,
    seeds: &SeedPolicy,
    workers: usize,
) -> Result<ExpMomentReport> {
    if n_paths < 2 {
        return Err(Error::TooFewPaths(n_paths));
    }
    let n = step_count(horizon, tau)?;
    let c_e = EnergyConstants::for_params(prm).c_e;
    let s2 = prm.sigma * prm.sigma;
    let exponent = |k: usize, x: State| c_e * (x.p * x.p + x.q.powi(4)) * (-s2 * k as f64 * tau).exp();
    let integrator = Integrator::new(*spec, *prm, tau);
    let acc = fold_paths(
        n_paths,
        seeds,
        workers,
        || LogSumExp::new(n + 1),
        |acc, ctx| {
            let mut rng = ctx.rng();
            let mut x = initial;
            let mut out = Vec::with_capacity(n + 1);
            out.push(exponent(0, x));
            for k in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                // a failed or non-finite step is recorded as an infinite exponent
                x = integrator.step_draw(x, z).unwrap_or(State::new(f64::INFINITY, f64::INFINITY));
                out.push(if x.is_finite() { exponent(k + 1, x) } else { f64::INFINITY });
            }
            acc.push(&out);
            Ok(())
        },
    )?;
    let count = acc.count as f64;
    let log_envelope = exp_moment_growth(prm) * (horizon + 1.0) + energy_h(initial, prm);
    let mut report = ExpMomentReport {
        times: (0..=n).map(|k| k as f64 * tau).collect(),
        estimates: Vec::with_capacity(n + 1),
        log_estimates: Vec::with_capacity(n + 1),
        std_errors: Vec::with_capacity(n + 1),
        max_exponents: acc.largest.clone(),
        log_envelope,
        overflow: false,
        exceeds_envelope: false,
    };
    for k in 0..=n {
        let log_mean = acc.max[k] + (acc.sum[k] / count).ln();
        let mean = log_mean.exp();
        // E[Y²] - E[Y]² in units of exp(2 max)
        let m1 = acc.sum[k] / count;
        let var = (acc.sum_sq[k] / count - m1 * m1).max(0.0) * count / (count - 1.0);
        let se = (2.0 * acc.max[k]).exp() * var;
        report.overflow |= !log_mean.is_finite() || !mean.is_finite() || !acc.largest[k].is_finite();
        report.exceeds_envelope |= log_mean.is_nan() || log_mean > log_envelope;
        report.estimates.push(if mean.is_finite() { mean } else { f64::INFINITY });
        report.log_estimates.push(log_mean);
        report.std_errors.push((se / count).sqrt());
    }
    Ok(report)
}

/// Central-difference Jacobian determinant of a one-step map at `s`,
/// with scale `h` (default `1e-5 (1 + |s|)`).
pub fn jacobian_det(step: impl Fn(State) -> Result<State>, s: State, h: Option<f64>) -> Result<f64> {
    let h = h.unwrap_or(1e-5 * (1.0 + s.norm()));
    let d = |dp: f64, dq: f64| step(State::new(s.p + dp, s.q + dq));
    let (pp, pm) = (d(h, 0.0)?, d(-h, 0.0)?);
    let (qp, qm) = (d(0.0, h)?, d(0.0, -h)?);
    let j11 = (pp.p - pm.p) / (2.0 * h);
    let j21 = (pp.q - pm.q) / (2.0 * h);
    let j12 = (qp.p - qm.p) / (2.0 * h);
    let j22 = (qp.q - qm.q) / (2.0 * h);
    Ok(j11 * j22 - j12 * j21)
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(vertices: &[State]) -> f64 {
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a.p * b.q - b.p * a.q
        })
        .sum();
    0.5 * twice.abs()
}

/// Area enclosed by the image of the unit circle, every vertex driven by the
/// same noise realization, recorded every `record_every` steps.
pub fn phase_area(
    spec: &SchemeSpec,
    prm: &PhysParams,
    tau: f64,
    horizon: f64,
    n_vertices: usize,
    seed: u64,
    record_every: usize,
) -> Result<Vec<(f64, f64)>> {
    if n_vertices < 3 {
        return Err(Error::InvalidParameter(format!("a polygon needs at least 3 vertices, got {n_vertices}")));
    }
    let n = step_count(horizon, tau)?;
    let record_every = record_every.max(1);
    let integrator = Integrator::new(*spec, *prm, tau);
    let mut rng = crate::montecarlo::path_rng(seed);
    let mut vertices: Vec<State> = (0..n_vertices)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / n_vertices as f64;
            State::new(theta.cos(), theta.sin())
        })
        .collect();
    let mut out = vec![(0.0, polygon_area(&vertices))];
    for k in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        for v in vertices.iter_mut() {
            *v = integrator.step_draw(*v, z).map_err(|e| Error::StepFailed { step: k, source: Box::new(e) })?;
        }
        if (k + 1) % record_every == 0 || k + 1 == n {
            out.push(((k + 1) as f64 * tau, polygon_area(&vertices)));
        }
    }
    Ok(out)
}

/// `E[H₀]` along the naive stochastic sub-step and along the exactly solved
/// one, iterated with step `τ` from a common initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationCurves {
    pub times: Vec<f64>,
    pub naive: Vec<Estimate>,
    pub split: Vec<Estimate>,
}

pub fn h0_dissipation_compare(
    prm: &PhysParams,
    tau: f64,
    horizon: f64,
    initial: State,
    n_paths: usize,
    seeds: &SeedPolicy,
    workers: usize,
) -> Result<DissipationCurves> {
    if n_paths < 2 {
        return Err(Error::TooFewPaths(n_paths));
    }
    let n = step_count(horizon, tau)?;
    let m = fold_paths(
        n_paths,
        seeds,
        workers,
        || Moments::new(2 * (n + 1)),
        |acc, ctx| {
            let mut rng = ctx.rng();
            let (mut a, mut b) = (initial, initial);
            let mut out = Vec::with_capacity(2 * (n + 1));
            out.push(energy_h0(a));
            out.push(energy_h0(b));
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                a = naive_substep_exact(a, tau, prm, z);
                b = ou_substep_exact(b, tau, prm, z);
                out.push(energy_h0(a));
                out.push(energy_h0(b));
            }
            acc.push(&out);
            Ok(())
        },
    )?;
    let est = m.estimates();
    Ok(DissipationCurves {
        times: (0..=n).map(|k| k as f64 * tau).collect(),
        naive: est.iter().step_by(2).copied().collect(),
        split: est.iter().skip(1).step_by(2).copied().collect(),
    })
}

/// Result of the one-step Lyapunov check at one initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOutcome {
    pub state: State,
    /// Estimate of `E[H(X_1) + C_H | X_0]`.
    pub lhs: Estimate,
    /// `e^{-υτ}(H(X_0) + C_H) + β`.
    pub rhs: f64,
    /// `rhs + 3 SE - lhs`; non-negative when the check passes.
    pub margin: f64,
    pub pass: bool,
}

pub fn lyapunov_check(
    spec: &SchemeSpec,
    prm: &PhysParams,
    tau: f64,
    states: &[State],
    n_draws: usize,
    seeds: &SeedPolicy,
) -> Result<Vec<LyapunovOutcome>> {
    if !spec.map.preserves_energy() {
        return Err(Error::InvalidParameter(format!("{} does not preserve the modified energy", spec.map.name())));
    }
    if n_draws < 2 {
        return Err(Error::TooFewPaths(n_draws));
    }
    let c_h = EnergyConstants::for_params(prm).c_h;
    let decay = (-prm.upsilon * tau).exp();
    let beta = prm.sigma * prm.sigma * (-(-prm.upsilon * tau).exp_m1()) / (2.0 * prm.upsilon)
        + c_h * (-(-prm.upsilon * tau).exp_m1());
    let integrator = Integrator::new(*spec, *prm, tau);
    states
        .iter()
        .enumerate()
        .map(|(i, &s0)| {
            let mut rng = seeds.rng(i as u64);
            let mut m = Moments::new(1);
            for _ in 0..n_draws {
                let z: f64 = rng.sample(StandardNormal);
                m.push(&[energy_h(integrator.step_draw(s0, z)?, prm) + c_h]);
            }
            let lhs = m.estimate(0);
            let rhs = decay * (energy_h(s0, prm) + c_h) + beta;
            let margin = rhs + 3.0 * lhs.std_error - lhs.mean;
            Ok(LyapunovOutcome { state: s0, lhs, rhs, margin, pass: margin >= 0.0 })
        })
        .collect()
}

/// Evaluates `jacobian_det` of a Lie–Trotter step with frozen noise draws
/// at each state; used for the conformal-symplecticity check.
pub fn step_jacobians(
    map: ConservativeMap,
    prm: &PhysParams,
    tau: f64,
    states: &[State],
    draws: &[f64],
) -> Result<Vec<f64>> {
    let integrator = Integrator::new(SchemeSpec::lie_trotter(map), *prm, tau);
    let mut out = Vec::with_capacity(states.len() * draws.len());
    for &s in states {
        for &z in draws {
            out.push(jacobian_det(|x| integrator.step_draw(x, z), s, None)?);
        }
    }
    Ok(out)
}
