//! Lie–Trotter and Strang compositions of the conservative map and the exact
//! stochastic sub-step, plus trajectory evolution.
//!
//! Randomness always enters through an explicit [`Noise`] argument: either a
//! standard normal draw (distribution-exact sub-step) or a window of fine
//! Brownian increments (path-coupled sub-step).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detflow::{ConservativeMap, SolverSettings};
use crate::error::{integer_ratio, Error, Result};
use crate::model::{PhysParams, Potential, State};
use crate::montecarlo::{path_rng, BrownianGrid};
use crate::stochflow::{CoupledKernel, OuIncrement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Conservative map over `τ`, then the stochastic sub-step.
    LieTrotter,
    /// Conservative map over `τ/2`, stochastic sub-step over `τ`, conservative map over `τ/2`.
    Strang,
}

impl std::str::FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lie-trotter" | "lietrotter" | "lie" => Ok(Composition::LieTrotter),
            "strang" => Ok(Composition::Strang),
            other => Err(Error::InvalidParameter(format!("unknown composition '{other}'"))),
        }
    }
}

/// A complete splitting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub map: ConservativeMap,
    pub composition: Composition,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl SchemeSpec {
    pub fn new(map: ConservativeMap, composition: Composition) -> Self {
        SchemeSpec { map, composition, solver: SolverSettings::default() }
    }

    pub fn lie_trotter(map: ConservativeMap) -> Self {
        Self::new(map, Composition::LieTrotter)
    }

    pub fn strang(map: ConservativeMap) -> Self {
        Self::new(map, Composition::Strang)
    }

    /// Short label such as `savf` or `strang-savf`.
    pub fn label(&self) -> String {
        let base = match self.map {
            ConservativeMap::Avf => "savf",
            ConservativeMap::DiscreteGradient => "sdg",
            ConservativeMap::PartitionedAvf => "spavf",
            ConservativeMap::SymplecticEuler => "ssympl-euler",
        };
        match self.composition {
            Composition::LieTrotter => base.to_string(),
            Composition::Strang => format!("strang-{base}"),
        }
    }
}

/// Source of the stochastic convolution for one step.
#[derive(Debug, Clone, Copy)]
pub enum Noise<'a> {
    /// Standard normal draw scaled by the exact convolution variance.
    Draw(f64),
    /// Fine Brownian increments covering the step.
    Window { increments: &'a [f64], fine_dt: f64 },
}

fn stochastic<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>, noise: Noise<'_>) -> Result<State> {
    match noise {
        Noise::Draw(z) => Ok(OuIncrement::new(tau, prm).apply(s, z)),
        Noise::Window { increments, fine_dt } => CoupledKernel::new(tau, fine_dt, prm)?.apply(s, increments),
    }
}

/// `X_{n+1} = Φ^S(Υ^D_τ(X_n))`. The composition field of `spec` is ignored.
pub fn lie_trotter_step<U: Potential>(
    s: State,
    tau: f64,
    prm: &PhysParams<U>,
    spec: &SchemeSpec,
    noise: Noise<'_>,
) -> Result<State> {
    let mid = spec.map.step(s, tau, prm, &spec.solver)?;
    stochastic(mid, tau, prm, noise)
}

/// `X_{n+1} = Υ^D_{τ/2}(Φ^S(Υ^D_{τ/2}(X_n)))`. The composition field of `spec` is ignored.
pub fn strang_step<U: Potential>(
    s: State,
    tau: f64,
    prm: &PhysParams<U>,
    spec: &SchemeSpec,
    noise: Noise<'_>,
) -> Result<State> {
    let first = spec.map.step(s, 0.5 * tau, prm, &spec.solver)?;
    let mid = stochastic(first, tau, prm, noise)?;
    spec.map.step(mid, 0.5 * tau, prm, &spec.solver)
}

/// One step of `spec`, dispatching on its composition.
pub fn step<U: Potential>(
    s: State,
    tau: f64,
    prm: &PhysParams<U>,
    spec: &SchemeSpec,
    noise: Noise<'_>,
) -> Result<State> {
    match spec.composition {
        Composition::LieTrotter => lie_trotter_step(s, tau, prm, spec, noise),
        Composition::Strang => strang_step(s, tau, prm, spec, noise),
    }
}

/// Fixed-step integrator with the stochastic sub-step coefficients cached.
#[derive(Debug, Clone)]
pub struct Integrator<U = crate::model::Quartic> {
    pub spec: SchemeSpec,
    pub prm: PhysParams<U>,
    pub tau: f64,
    ou: OuIncrement,
    kernel: Option<CoupledKernel>,
}

impl<U: Potential> Integrator<U> {
    pub fn new(spec: SchemeSpec, prm: PhysParams<U>, tau: f64) -> Self {
        Integrator { spec, prm, tau, ou: OuIncrement::new(tau, &prm), kernel: None }
    }

    /// Integrator that consumes windows of a fine Brownian grid with spacing `fine_dt`.
    pub fn coupled(spec: SchemeSpec, prm: PhysParams<U>, tau: f64, fine_dt: f64) -> Result<Self> {
        let kernel = CoupledKernel::new(tau, fine_dt, &prm)?;
        Ok(Integrator { spec, prm, tau, ou: kernel.increment, kernel: Some(kernel) })
    }

    /// Number of fine cells per step for a coupled integrator.
    pub fn cells(&self) -> Option<usize> {
        self.kernel.as_ref().map(CoupledKernel::cells)
    }

    fn conservative(&self, s: State, tau: f64) -> Result<State> {
        self.spec.map.step(s, tau, &self.prm, &self.spec.solver)
    }

    fn compose(&self, s: State, noise: impl FnOnce(State) -> Result<State>) -> Result<State> {
        match self.spec.composition {
            Composition::LieTrotter => noise(self.conservative(s, self.tau)?),
            Composition::Strang => {
                let half = 0.5 * self.tau;
                let mid = noise(self.conservative(s, half)?)?;
                self.conservative(mid, half)
            }
        }
    }

    /// Step driven by a standard normal draw.
    #[inline]
    pub fn step_draw(&self, s: State, z: f64) -> Result<State> {
        self.compose(s, |x| Ok(self.ou.apply(x, z)))
    }

    /// Step driven by one window of fine increments.
    #[inline]
    pub fn step_window(&self, s: State, window: &[f64]) -> Result<State> {
        let kernel = self
            .kernel
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("integrator was built without a fine grid".into()))?;
        self.compose(s, |x| kernel.apply(x, window))
    }

    /// Step with an explicit stochastic convolution value (`σ∫e^{..}dW`).
    #[inline]
    pub fn step_convolution(&self, s: State, convolution: f64) -> Result<State> {
        self.compose(s, |x| Ok(self.ou.apply_convolution(x, convolution)))
    }

    /// Evolves along a fine grid, calling `observe(n, X_n)` for every coarse time `t_n = nτ`.
    pub fn evolve_on_grid(
        &self,
        initial: State,
        grid: &BrownianGrid,
        mut observe: impl FnMut(usize, State),
    ) -> Result<State> {
        let cells = self
            .cells()
            .filter(|_| self.kernel.as_ref().is_some_and(|k| k.fine_dt == grid.fine_dt))
            .ok_or(Error::GridMismatch { tau: self.tau, fine_dt: grid.fine_dt })?;
        if !grid.increments.len().is_multiple_of(cells) {
            return Err(Error::NonIntegralRatio { tau: self.tau, fine_dt: grid.fine_dt });
        }
        let mut x = initial;
        observe(0, x);
        for (n, window) in grid.increments.chunks_exact(cells).enumerate() {
            x = self.step_window(x, window).map_err(|e| Error::StepFailed { step: n, source: Box::new(e) })?;
            observe(n + 1, x);
        }
        Ok(x)
    }
}

/// A simulated path on the uniform grid `t_n = nτ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tau: f64,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub scheme: SchemeSpec,
    pub seed: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn terminal(&self) -> State {
        *self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Number of steps `N` with `horizon = N τ`.
pub fn step_count(horizon: f64, tau: f64) -> Result<usize> {
    if horizon == 0.0 && tau > 0.0 {
        return Ok(0);
    }
    integer_ratio(horizon, tau).ok_or(Error::NonIntegralGrid { horizon, dt: tau })
}

/// Simulates `horizon / τ` steps from `initial` with distribution-exact
/// stochastic sub-steps drawn from the stream of `seed`.
pub fn simulate<U: Potential>(
    initial: State,
    horizon: f64,
    tau: f64,
    prm: &PhysParams<U>,
    spec: &SchemeSpec,
    seed: u64,
) -> Result<Trajectory> {
    let n = step_count(horizon, tau)?;
    let integrator = Integrator::new(*spec, *prm, tau);
    let mut rng = path_rng(seed);
    let mut states = Vec::with_capacity(n + 1);
    states.push(initial);
    let mut x = initial;
    for k in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        x = integrator.step_draw(x, z).map_err(|e| Error::StepFailed { step: k, source: Box::new(e) })?;
        states.push(x);
    }
    let times = (0..=n).map(|k| k as f64 * tau).collect();
    Ok(Trajectory { tau, times, states, scheme: *spec, seed })
}

/// Normalised increments of the conservative map, `A = P̄ - P`, `B = Q̄ - Q`,
/// compared against the subsystem vector field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResiduals {
    /// `|(υ/2) P + U'(Q) + A/τ|`.
    pub r_a: f64,
    /// `|P + (υ/2) Q - B/τ|`.
    pub r_b: f64,
}

pub fn consistency_residuals<U: Potential>(
    map: ConservativeMap,
    s: State,
    tau: f64,
    prm: &PhysParams<U>,
) -> Result<ConsistencyResiduals> {
    let out = map.step(s, tau, prm, &SolverSettings::default())?;
    let h = 0.5 * prm.upsilon;
    let a = out.p - s.p;
    let b = out.q - s.q;
    Ok(ConsistencyResiduals {
        r_a: (h * s.p + prm.potential.gradient(s.q) + a / tau).abs(),
        r_b: (s.p + h * s.q - b / tau).abs(),
    })
}
