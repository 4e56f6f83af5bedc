//! Physical model: the damped, noisy Hamiltonian system
//!
//! ```text
//! dP = -υ P dt - U'(Q) dt + σ dW
//! dQ =  P dt
//! ```
//!
//! together with its energy `H₀ = p²/2 + U(q)`, the shifted Hamiltonian
//! `H = H₀ + (υ/2) p q` conserved by the deterministic part of the splitting,
//! and the Gibbs invariant measure `π ∝ exp(-(2υ/σ²) H₀)`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::quadrature;

/// Phase-space point, momentum first.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub p: f64,
    pub q: f64,
}

impl State {
    pub const ORIGIN: State = State { p: 0.0, q: 0.0 };

    pub const fn new(p: f64, q: f64) -> Self {
        State { p, q }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.p.hypot(self.q)
    }

    pub fn distance_sq(&self, other: &State) -> f64 {
        let dp = self.p - other.p;
        let dq = self.q - other.q;
        dp * dp + dq * dq
    }
}

/// Confining potential `U(q)` seen by the position coordinate.
///
/// The conservative maps need the chord-averaged gradient
/// `∫₀¹ U'(a + λ(b - a)) dλ = (U(b) - U(a)) / (b - a)` and its partial
/// derivative in `b` for their Newton Jacobians.
pub trait Potential: Copy + Send + Sync + std::fmt::Debug {
    fn value(&self, q: f64) -> f64;
    fn gradient(&self, q: f64) -> f64;
    fn hessian(&self, q: f64) -> f64;
    fn averaged_gradient(&self, a: f64, b: f64) -> f64;
    fn averaged_gradient_db(&self, a: f64, b: f64) -> f64;

    /// `averaged_gradient(a, b) - gradient((a + b) / 2)`.
    fn gradient_defect(&self, a: f64, b: f64) -> f64 {
        self.averaged_gradient(a, b) - self.gradient(0.5 * (a + b))
    }

    /// Partial derivative of [`Potential::gradient_defect`] in `b`.
    fn gradient_defect_db(&self, a: f64, b: f64) -> f64 {
        self.averaged_gradient_db(a, b) - 0.5 * self.hessian(0.5 * (a + b))
    }
}

/// `U(q) = q⁴ / 4`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quartic;

impl Potential for Quartic {
    fn value(&self, q: f64) -> f64 {
        let q2 = q * q;
        0.25 * q2 * q2
    }

    fn gradient(&self, q: f64) -> f64 {
        grad_u(q)
    }

    fn hessian(&self, q: f64) -> f64 {
        3.0 * q * q
    }

    fn averaged_gradient(&self, a: f64, b: f64) -> f64 {
        crate::detflow::avg_cubic(a, b)
    }

    fn averaged_gradient_db(&self, a: f64, b: f64) -> f64 {
        0.25 * (a * a + 2.0 * a * b + 3.0 * b * b)
    }

    // (a+b)(a²+b²)/4 - (a+b)³/8 = (a+b)(b-a)²/8, free of cancellation.
    fn gradient_defect(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        0.125 * (a + b) * d * d
    }

    fn gradient_defect_db(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        0.125 * (d * d + 2.0 * (a + b) * d)
    }
}

/// Friction, noise amplitude and potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams<U = Quartic> {
    pub upsilon: f64,
    pub sigma: f64,
    pub potential: U,
}

impl PhysParams<Quartic> {
    /// Quartic model. `upsilon` must be positive; `sigma = 0` is accepted so
    /// that the deterministic skeleton of every scheme can be exercised.
    pub fn new(upsilon: f64, sigma: f64) -> Result<Self> {
        Self::with_potential(upsilon, sigma, Quartic)
    }
}

impl<U: Potential> PhysParams<U> {
    pub fn with_potential(upsilon: f64, sigma: f64, potential: U) -> Result<Self> {
        if !(upsilon.is_finite() && upsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("friction must be positive, got {upsilon}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise amplitude must be non-negative, got {sigma}")));
        }
        Ok(PhysParams { upsilon, sigma, potential })
    }

    pub fn energy_h0(&self, s: State) -> f64 {
        0.5 * s.p * s.p + self.potential.value(s.q)
    }

    pub fn energy_h(&self, s: State) -> f64 {
        self.energy_h0(s) + 0.5 * self.upsilon * s.p * s.q
    }

    /// Exponent in `π ∝ exp(-(2υ/σ²) H₀)`: the inverse temperature `β = 2υ/σ²`.
    pub fn inverse_temperature(&self) -> f64 {
        2.0 * self.upsilon / (self.sigma * self.sigma)
    }
}

/// `U'(q) = q³` for the quartic potential.
pub fn grad_u(q: f64) -> f64 {
    q * q * q
}

/// `H₀(p, q) = p²/2 + q⁴/4`.
pub fn energy_h0(s: State) -> f64 {
    Quartic.value(s.q) + 0.5 * s.p * s.p
}

/// `H(p, q) = H₀(p, q) + (υ/2) p q`.
pub fn energy_h<U: Potential>(s: State, prm: &PhysParams<U>) -> f64 {
    prm.energy_h(s)
}

/// Unnormalised log Gibbs density `-(2υ/σ²) H₀(s)`.
pub fn gibbs_log_density<U: Potential>(s: State, prm: &PhysParams<U>) -> f64 {
    -prm.inverse_temperature() * prm.energy_h0(s)
}

/// Constants of the energy equivalence for the quartic model:
/// `H + c_h ≥ 1` and `c_e (p² + q⁴) ≤ H + c_h + υ⁴/8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub c_h: f64,
    pub c_e: f64,
}

impl EnergyConstants {
    pub fn for_params(prm: &PhysParams) -> Self {
        let u4 = prm.upsilon.powi(4);
        EnergyConstants { c_h: u4 / 64.0 + 1.0, c_e: 0.125 }
    }

    /// Upper constant `C` with `H ≤ C (p² + q⁴ + 1)`.
    pub fn upper(prm: &PhysParams) -> f64 {
        0.5 + 0.25 * prm.upsilon
    }

    /// Offset in the lower bound `c_e (p² + q⁴) - υ⁴/8 ≤ H`.
    pub fn lower_offset(prm: &PhysParams) -> f64 {
        prm.upsilon.powi(4) / 8.0
    }
}

/// Stationary second and fourth moments under the Gibbs measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsMoments {
    pub ep2: f64,
    pub eq2: f64,
    pub eq4: f64,
}

const QUAD_REL_TOL: f64 = 1e-10;

/// Gibbs moments of the quartic model; `E[q²]` by adaptive quadrature.
pub fn gibbs_moments(prm: &PhysParams) -> Result<GibbsMoments> {
    let var = prm.sigma * prm.sigma / (2.0 * prm.upsilon);
    if var == 0.0 {
        return Ok(GibbsMoments { ep2: 0.0, eq2: 0.0, eq4: 0.0 });
    }
    let marginal = PositionMarginal::new(prm)?;
    let num = marginal.integrate_weighted(|q| q * q)?;
    Ok(GibbsMoments { ep2: var, eq2: num / marginal.normalizer, eq4: var })
}

/// Position marginal of the Gibbs measure, `∝ exp(-(2υ/σ²) U(q))`.
#[derive(Debug, Clone, Copy)]
pub struct PositionMarginal<U = Quartic> {
    beta: f64,
    potential: U,
    /// Symmetric truncation radius beyond which the weight is below 1e-18.
    pub cutoff: f64,
    /// `∫ exp(-β U(q)) dq`.
    pub normalizer: f64,
}

impl<U: Potential> PositionMarginal<U> {
    pub fn new(prm: &PhysParams<U>) -> Result<Self> {
        if prm.sigma == 0.0 {
            return Err(Error::InvalidParameter("Gibbs measure needs sigma > 0".into()));
        }
        let beta = prm.inverse_temperature();
        let weight = |q: f64| (-beta * prm.potential.value(q)).exp();
        let mut cutoff = 1.0_f64;
        while weight(cutoff) * (1.0 + cutoff.powi(4)) > 1e-18 || weight(-cutoff) * (1.0 + cutoff.powi(4)) > 1e-18 {
            cutoff *= 1.25;
            if cutoff > 1e6 {
                return Err(Error::InvalidParameter("potential is not confining".into()));
            }
        }
        let mut m = PositionMarginal { beta, potential: prm.potential, cutoff, normalizer: 1.0 };
        m.normalizer = m.integrate_weighted(|_| 1.0)?;
        Ok(m)
    }

    fn weight(&self, q: f64) -> f64 {
        (-self.beta * self.potential.value(q)).exp()
    }

    /// `∫ f(q) exp(-β U(q)) dq` over the truncated line.
    pub fn integrate_weighted<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let g = |q: f64| f(q) * self.weight(q);
        let left = quadrature::integrate(g, -self.cutoff, 0.0, 1e-300, QUAD_REL_TOL * 1e-2)?;
        let right = quadrature::integrate(g, 0.0, self.cutoff, 1e-300, QUAD_REL_TOL * 1e-2)?;
        Ok(left + right)
    }

    /// Probability of `lo ≤ q < hi`.
    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        let lo = lo.max(-self.cutoff);
        let hi = hi.min(self.cutoff);
        if hi <= lo {
            return Ok(0.0);
        }
        let v = quadrature::integrate(|q| self.weight(q), lo, hi, 1e-16, 1e-12)?;
        Ok(v / self.normalizer)
    }

    pub fn density(&self, q: f64) -> f64 {
        self.weight(q) / self.normalizer
    }
}

/// Probability of `lo ≤ p < hi` under the Gaussian momentum marginal `N(0, σ²/(2υ))`.
pub fn momentum_mass<U: Potential>(prm: &PhysParams<U>, lo: f64, hi: f64) -> f64 {
    let sd = prm.sigma / (2.0 * prm.upsilon).sqrt();
    let cdf = |x: f64| {
        if x == f64::INFINITY {
            1.0
        } else if x == f64::NEG_INFINITY {
            0.0
        } else {
            0.5 * (1.0 + erf(x / (sd * std::f64::consts::SQRT_2)))
        }
    };
    (cdf(hi) - cdf(lo)).max(0.0)
}

/// Normalised Gibbs density `ρ(p, q)`.
pub fn gibbs_density<U: Potential>(s: State, prm: &PhysParams<U>, marginal: &PositionMarginal<U>) -> f64 {
    let var = prm.sigma * prm.sigma / (2.0 * prm.upsilon);
    let gauss = (-(s.p * s.p) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    gauss * marginal.density(s.q)
}
