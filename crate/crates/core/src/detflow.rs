//! One-step maps for the deterministic Hamiltonian subsystem
//!
//! ```text
//! dP̄ = (-(υ/2) P̄ - U'(Q̄)) dt
//! dQ̄ = (  P̄ + (υ/2) Q̄ ) dt
//! ```
//!
//! whose flow conserves `H = p²/2 + U(q) + (υ/2) p q`. The average vector
//! field, discrete gradient and partitioned AVF maps conserve `H` exactly
//! (up to the tolerance of the Newton solve); the symplectic Euler map is
//! explicit and area preserving instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PhysParams, Potential, State};

/// Which one-step approximation of the conservative subsystem to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConservativeMap {
    Avf,
    #[serde(alias = "dg")]
    DiscreteGradient,
    #[serde(alias = "pavf")]
    PartitionedAvf,
    SymplecticEuler,
}

impl ConservativeMap {
    pub const ALL: [ConservativeMap; 4] = [
        ConservativeMap::Avf,
        ConservativeMap::DiscreteGradient,
        ConservativeMap::PartitionedAvf,
        ConservativeMap::SymplecticEuler,
    ];

    pub const ENERGY_PRESERVING: [ConservativeMap; 3] =
        [ConservativeMap::Avf, ConservativeMap::DiscreteGradient, ConservativeMap::PartitionedAvf];

    pub fn preserves_energy(self) -> bool {
        !matches!(self, ConservativeMap::SymplecticEuler)
    }

    pub fn name(self) -> &'static str {
        match self {
            ConservativeMap::Avf => "avf",
            ConservativeMap::DiscreteGradient => "dg",
            ConservativeMap::PartitionedAvf => "pavf",
            ConservativeMap::SymplecticEuler => "symplectic-euler",
        }
    }

    pub fn step<U: Potential>(
        self,
        s: State,
        tau: f64,
        prm: &PhysParams<U>,
        settings: &SolverSettings,
    ) -> Result<State> {
        match self {
            ConservativeMap::Avf => avf_step(s, tau, prm, settings),
            ConservativeMap::DiscreteGradient => dg_step(s, tau, prm, settings),
            ConservativeMap::PartitionedAvf => pavf_step(s, tau, prm, settings),
            ConservativeMap::SymplecticEuler => sympl_euler_step(s, tau, prm),
        }
    }
}

impl std::str::FromStr for ConservativeMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avf" => Ok(ConservativeMap::Avf),
            "dg" | "discrete-gradient" => Ok(ConservativeMap::DiscreteGradient),
            "pavf" | "partitioned-avf" => Ok(ConservativeMap::PartitionedAvf),
            "symplectic-euler" | "se" => Ok(ConservativeMap::SymplecticEuler),
            other => Err(Error::InvalidParameter(format!("unknown conservative map '{other}'"))),
        }
    }
}

/// Newton solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Retry with a damped fixed-point iteration when Newton stalls.
    pub fallback: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { rel_tol: 1e-12, abs_tol: 1e-14, max_iter: 50, fallback: true }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!("bad solver settings {self:?}")));
        }
        Ok(())
    }
}

/// Root returned by [`newton_solve_2d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSolution {
    pub root: State,
    pub iterations: usize,
    pub residual: f64,
}

/// `∫₀¹ (a + λ(b - a))³ dλ` in the factored form `(a + b)(a² + b²)/4`.
pub fn avg_cubic(a: f64, b: f64) -> f64 {
    0.25 * (a + b) * (a * a + b * b)
}

/// Vector field of the conservative subsystem.
pub fn vector_field<U: Potential>(s: State, prm: &PhysParams<U>) -> State {
    let h = 0.5 * prm.upsilon;
    State::new(-h * s.p - prm.potential.gradient(s.q), s.p + h * s.q)
}

/// Largest admissible step for the implicit maps, `min(1, 2/υ)`.
pub fn step_limit(upsilon: f64) -> f64 {
    (2.0 / upsilon).min(1.0)
}

fn check_step(tau: f64, upsilon: f64) -> Result<()> {
    let limit = step_limit(upsilon);
    if tau.is_finite() && (0.0..limit).contains(&tau) {
        Ok(())
    } else {
        Err(Error::InvalidStepSize { tau, limit })
    }
}

fn predictor<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>) -> State {
    let f = vector_field(s, prm);
    State::new(s.p + tau * f.p, s.q + tau * f.q)
}

/// Solves `residual(x) = 0` in two unknowns by Newton's method.
///
/// Convergence is declared once `‖residual‖ ≤ abs_tol + rel_tol·‖guess‖`, or
/// when the Newton update falls to round-off level. `jacobian` returns the
/// row-major matrix `[[∂r₀/∂p, ∂r₀/∂q], [∂r₁/∂p, ∂r₁/∂q]]`.
pub fn newton_solve_2d<R, J>(
    residual: R,
    jacobian: J,
    guess: State,
    settings: &SolverSettings,
) -> Result<NewtonSolution>
where
    R: Fn(State) -> (f64, f64),
    J: Fn(State) -> [[f64; 2]; 2],
{
    let tol = settings.abs_tol + settings.rel_tol * guess.norm();
    let mut x = guess;
    let mut last = f64::INFINITY;
    for k in 0..settings.max_iter {
        let (r0, r1) = residual(x);
        let rn = r0.hypot(r1);
        last = rn;
        if !rn.is_finite() {
            break;
        }
        if rn <= tol {
            return Ok(NewtonSolution { root: x, iterations: k, residual: rn });
        }
        let [[a, b], [c, d]] = jacobian(x);
        let det = a * d - b * c;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularJacobian { determinant: det });
        }
        let dp = (d * r0 - b * r1) / det;
        let dq = (a * r1 - c * r0) / det;
        x = State::new(x.p - dp, x.q - dq);
        if dp.hypot(dq) <= 4.0 * f64::EPSILON * (1.0 + x.norm()) {
            let (r0, r1) = residual(x);
            return Ok(NewtonSolution { root: x, iterations: k + 1, residual: r0.hypot(r1) });
        }
    }
    if settings.fallback && settings.max_iter > 0 {
        if let Some(sol) = damped_fixed_point(&residual, guess, tol, (20 * settings.max_iter).max(500)) {
            return Ok(sol);
        }
    }
    Err(Error::NonConvergence { iterations: settings.max_iter, residual: last })
}

// x ← x - ω r(x); the residuals are I + O(τ) perturbations of the identity.
fn damped_fixed_point<R>(residual: &R, guess: State, tol: f64, max_iter: usize) -> Option<NewtonSolution>
where
    R: Fn(State) -> (f64, f64),
{
    const OMEGA: f64 = 0.5;
    let mut x = guess;
    for k in 0..max_iter {
        let (r0, r1) = residual(x);
        let rn = r0.hypot(r1);
        if !rn.is_finite() {
            return None;
        }
        if rn <= tol {
            return Some(NewtonSolution { root: x, iterations: k, residual: rn });
        }
        x = State::new(x.p - OMEGA * r0, x.q - OMEGA * r1);
    }
    None
}

/// Average vector field map:
///
/// ```text
/// P̄ = P - (τυ/4)(P̄ + P) - τ ∫₀¹ U'(Q + λ(Q̄ - Q)) dλ
/// Q̄ = Q + (τ/2)(P̄ + P) + (τυ/4)(Q̄ + Q)
/// ```
pub fn avf_step<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>, settings: &SolverSettings) -> Result<State> {
    check_step(tau, prm.upsilon)?;
    if tau == 0.0 {
        return Ok(s);
    }
    let k = 0.25 * tau * prm.upsilon;
    let u = prm.potential;
    let residual = |x: State| {
        (
            x.p - s.p + k * (x.p + s.p) + tau * u.averaged_gradient(s.q, x.q),
            x.q - s.q - 0.5 * tau * (x.p + s.p) - k * (x.q + s.q),
        )
    };
    let jacobian = |x: State| [[1.0 + k, tau * u.averaged_gradient_db(s.q, x.q)], [-0.5 * tau, 1.0 - k]];
    Ok(newton_solve_2d(residual, jacobian, predictor(s, tau, prm), settings)?.root)
}

/// Gonzalez discrete-gradient map `x̂ = x + τ J ∇̄H(x̂; x)`.
///
/// For this Hamiltonian the quadratic terms are integrated exactly by the
/// midpoint gradient, so the correction `(H(x̂) - H(x) - ∇H(x̄)ᵀδ)/‖δ‖²`
/// reduces to `δq·D(q, q̂)/‖δ‖²` with `D` the potential's
/// [gradient defect](Potential::gradient_defect). Below `‖δ‖² < 1e-28` the
/// correction is taken as zero.
pub fn dg_step<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>, settings: &SolverSettings) -> Result<State> {
    check_step(tau, prm.upsilon)?;
    if tau == 0.0 {
        return Ok(s);
    }
    let h = 0.5 * prm.upsilon;
    let u = prm.potential;
    // (c, ∂c/∂p̂, ∂c/∂q̂) for the correction coefficient c.
    let correction = |x: State| -> (f64, f64, f64) {
        let dp = x.p - s.p;
        let dq = x.q - s.q;
        let nn = dp * dp + dq * dq;
        if nn < 1e-28 {
            return (0.0, 0.0, 0.0);
        }
        let g = u.gradient_defect(s.q, x.q);
        let g_b = u.gradient_defect_db(s.q, x.q);
        let c = dq * g / nn;
        let c_p = -2.0 * dq * g * dp / (nn * nn);
        let c_q = (g + dq * g_b) / nn - 2.0 * dq * dq * g / (nn * nn);
        (c, c_p, c_q)
    };
    let residual = |x: State| {
        let (c, _, _) = correction(x);
        let pm = 0.5 * (x.p + s.p);
        let qm = 0.5 * (x.q + s.q);
        let grad_p = pm + h * qm + c * (x.p - s.p);
        let grad_q = u.gradient(qm) + h * pm + c * (x.q - s.q);
        (x.p - s.p + tau * grad_q, x.q - s.q - tau * grad_p)
    };
    let jacobian = |x: State| {
        let (c, c_p, c_q) = correction(x);
        let dp = x.p - s.p;
        let dq = x.q - s.q;
        let qm = 0.5 * (x.q + s.q);
        [
            [1.0 + tau * (0.5 * h + c_p * dq), tau * (0.5 * u.hessian(qm) + 0.5 * h + c_q * dq + c)],
            [-tau * (0.5 + c_p * dp + c), 1.0 - tau * (0.5 * h + c_q * dp)],
        ]
    };
    Ok(newton_solve_2d(residual, jacobian, predictor(s, tau, prm), settings)?.root)
}

/// Partitioned AVF map:
///
/// ```text
/// P̄ = P - (τυ/2) P̄ - τ ∫₀¹ U'(Q + λ(Q̄ - Q)) dλ
/// Q̄ = Q + (τ/2)(P̄ + P) + (τυ/2) Q
/// ```
pub fn pavf_step<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>, settings: &SolverSettings) -> Result<State> {
    check_step(tau, prm.upsilon)?;
    if tau == 0.0 {
        return Ok(s);
    }
    let k = 0.5 * tau * prm.upsilon;
    let u = prm.potential;
    let residual = |x: State| {
        (x.p - s.p + k * x.p + tau * u.averaged_gradient(s.q, x.q), x.q - s.q - 0.5 * tau * (x.p + s.p) - k * s.q)
    };
    let jacobian = |x: State| [[1.0 + k, tau * u.averaged_gradient_db(s.q, x.q)], [-0.5 * tau, 1.0]];
    Ok(newton_solve_2d(residual, jacobian, predictor(s, tau, prm), settings)?.root)
}

/// Symplectic Euler map, implicit in `P̄` only and solved in closed form:
/// `P̄ = (P - τU'(Q)) / (1 + τυ/2)`, `Q̄ = Q + τ(P̄ + (υ/2)Q)`.
pub fn sympl_euler_step<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>) -> Result<State> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidStepSize { tau, limit: f64::INFINITY });
    }
    let h = 0.5 * prm.upsilon;
    let p = (s.p - tau * prm.potential.gradient(s.q)) / (1.0 + tau * h);
    let q = s.q + tau * (p + h * s.q);
    Ok(State::new(p, q))
}

/// `H(map(s)) - H(s)` with default solver settings.
pub fn energy_residual<U: Potential>(kind: ConservativeMap, s: State, tau: f64, prm: &PhysParams<U>) -> Result<f64> {
    let out = kind.step(s, tau, prm, &SolverSettings::default())?;
    Ok(prm.energy_h(out) - prm.energy_h(s))
}
