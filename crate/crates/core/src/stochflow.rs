//! Exact flow of the linear stochastic subsystem
//!
//! ```text
//! dP̃ = -(υ/2) P̃ dt + σ dW
//! dQ̃ = -(υ/2) Q̃ dt
//! ```
//!
//! Both coordinates decay at rate `υ/2`, so `H + C` contracts by `e^{-υτ}`
//! in expectation up to the injected noise. The naive sub-step, which damps
//! only the momentum at the full rate `υ`, is kept for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{integer_ratio, Error, Result};
use crate::model::{PhysParams, Potential, State};

/// Decay factor and noise scale of one exact sub-step of length `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuIncrement {
    /// `e^{-υτ/2}`.
    pub decay: f64,
    /// Standard deviation of `σ ∫ e^{-(υ/2)(t_{n+1} - t)} dW_t`, i.e. `σ √((1 - e^{-υτ})/υ)`.
    pub noise_std: f64,
    pub tau: f64,
}

impl OuIncrement {
    pub fn new<U: Potential>(tau: f64, prm: &PhysParams<U>) -> Self {
        let u = prm.upsilon;
        OuIncrement { decay: (-0.5 * u * tau).exp(), noise_std: prm.sigma * (-(-u * tau).exp_m1() / u).sqrt(), tau }
    }

    /// Applies the sub-step with a standard normal draw `z`.
    #[inline]
    pub fn apply(&self, s: State, z: f64) -> State {
        State::new(self.decay * s.p + self.noise_std * z, self.decay * s.q)
    }

    /// Applies the sub-step with an already-evaluated stochastic convolution.
    #[inline]
    pub fn apply_convolution(&self, s: State, convolution: f64) -> State {
        State::new(self.decay * s.p + convolution, self.decay * s.q)
    }
}

/// Exact-in-distribution sub-step driven by a standard normal draw.
pub fn ou_substep_exact<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>, z: f64) -> State {
    OuIncrement::new(tau, prm).apply(s, z)
}

/// Midpoint-weighted convolution of a window of fine Brownian increments.
///
/// Weight `k` is `σ e^{-(υ/2)(τ - (k + 1/2) τ_f)}`, so that coarse and fine
/// solutions driven by the same window see the same Wiener path.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledKernel {
    pub increment: OuIncrement,
    pub fine_dt: f64,
    weights: Vec<f64>,
}

impl CoupledKernel {
    pub fn new<U: Potential>(tau: f64, fine_dt: f64, prm: &PhysParams<U>) -> Result<Self> {
        let cells = integer_ratio(tau, fine_dt).filter(|&n| n >= 1).ok_or(Error::GridMismatch { tau, fine_dt })?;
        let weights = (0..cells)
            .map(|k| {
                let age = tau - (k as f64 + 0.5) * fine_dt;
                prm.sigma * (-0.5 * prm.upsilon * age).exp()
            })
            .collect();
        Ok(CoupledKernel { increment: OuIncrement::new(tau, prm), fine_dt, weights })
    }

    pub fn cells(&self) -> usize {
        self.weights.len()
    }

    pub fn convolve(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.weights.len() {
            return Err(Error::GridMismatch { tau: self.increment.tau, fine_dt: self.fine_dt });
        }
        Ok(self.weights.iter().zip(window).map(|(w, dw)| w * dw).sum())
    }

    #[inline]
    pub fn apply(&self, s: State, window: &[f64]) -> Result<State> {
        Ok(self.increment.apply_convolution(s, self.convolve(window)?))
    }
}

/// Sub-step driven by the fine Brownian increments of `[t_n, t_n + τ]`.
pub fn ou_substep_coupled<U: Potential>(
    s: State,
    tau: f64,
    window: &[f64],
    fine_dt: f64,
    prm: &PhysParams<U>,
) -> Result<State> {
    if window.is_empty() {
        return Err(Error::GridMismatch { tau, fine_dt });
    }
    CoupledKernel::new(tau, fine_dt, prm)?.apply(s, window)
}

/// Naive sub-step: full-rate OU in `p`, `q` frozen.
pub fn naive_substep_exact<U: Potential>(s: State, tau: f64, prm: &PhysParams<U>, z: f64) -> State {
    let u = prm.upsilon;
    let decay = (-u * tau).exp();
    let sd = prm.sigma * (-(-2.0 * u * tau).exp_m1() / (2.0 * u)).sqrt();
    State::new(decay * s.p + sd * z, s.q)
}
