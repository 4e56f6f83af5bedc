//! Run configuration.
//!
//! A config file is flat TOML (`key = value`, one per line). Every key is
//! optional; missing keys take the defaults of the selected experiment.
//!
//! ```toml
//! experiment = "strong-order"
//! scheme = "avf"              # avf | dg | pavf | symplectic-euler
//! composition = "lie-trotter" # lie-trotter | strang
//! upsilon = 10.0
//! sigma = 1.0
//! taus = [0.015625, 0.0078125, 0.00390625]
//! fine_dt = 0.0001220703125
//! horizon = 1.0
//! n_paths = 1000
//! seed = 1
//! ```

use std::path::PathBuf;

use langevin_splitting::{Composition, ConservativeMap};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const EXPERIMENTS: [&str; 12] = [
    "simulate",
    "strong-order",
    "weak-order",
    "long-time-error",
    "ergodic-average",
    "histogram",
    "msd",
    "exp-moment",
    "lyapunov",
    "jacobian",
    "phase-area",
    "dissipation-demo",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableKind {
    /// `sin(p) sin(q)`
    SinProduct,
    /// `sin(√(p² + q²))`
    SinRadius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub scheme: ConservativeMap,
    pub composition: Composition,
    pub upsilon: f64,
    pub sigma: f64,
    /// Step size of single-level experiments.
    pub tau: f64,
    /// Step sizes of convergence experiments.
    pub taus: Vec<f64>,
    /// Reference step size; also the spacing of the shared Brownian grid.
    pub fine_dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// 0 selects one worker per available core.
    pub workers: usize,
    pub out: PathBuf,
    pub initial: [f64; 2],
    /// Second initial state of the ergodic-average experiment.
    pub alt_initial: [f64; 2],
    pub burn_in: f64,
    pub observable: ObservableKind,
    pub bins: [usize; 2],
    pub p_range: [f64; 2],
    pub q_range: [f64; 2],
    pub times: Vec<f64>,
    /// Record every `stride` steps.
    pub stride: usize,
    pub fit_window: f64,
    pub sample_dt: f64,
    pub states: Vec<[f64; 2]>,
    pub n_draws: usize,
    pub n_vertices: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
}

fn pow2(k: i32) -> f64 {
    2.0_f64.powi(-k)
}

impl RunConfig {
    /// Desk-scale defaults of an experiment.
    pub fn defaults(experiment: &str) -> Result<Self, CliError> {
        if !EXPERIMENTS.contains(&experiment) {
            return Err(CliError::UnknownExperiment(experiment.to_string()));
        }
        let mut c = RunConfig {
            experiment: experiment.to_string(),
            scheme: ConservativeMap::Avf,
            composition: Composition::LieTrotter,
            upsilon: 10.0,
            sigma: 1.0,
            tau: pow2(8),
            taus: (6..=10).map(pow2).collect(),
            fine_dt: pow2(13),
            horizon: 1.0,
            n_paths: 1000,
            seed: 1,
            workers: 0,
            out: PathBuf::from("out"),
            initial: [1.0, 1.0],
            alt_initial: [2.0, 2.0],
            burn_in: 64.0,
            observable: ObservableKind::SinProduct,
            bins: [40, 40],
            p_range: [-1.0, 1.0],
            q_range: [-1.5, 1.5],
            times: vec![0.0, 2.0, 256.0],
            stride: 1,
            fit_window: 2.0,
            sample_dt: 0.5,
            states: vec![[0.0, 0.0], [1.0, 1.0], [2.0, -1.0]],
            n_draws: 100_000,
            n_vertices: 10_000,
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_iter: 50,
        };
        match experiment {
            "weak-order" => c.n_paths = 5000,
            "long-time-error" => {
                c.taus = vec![pow2(8)];
                c.fine_dt = pow2(11);
                c.horizon = 100.0;
                c.n_paths = 200;
            }
            "ergodic-average" => {
                c.upsilon = 15.0;
                c.horizon = 512.0;
                c.n_paths = 100;
                c.initial = [0.0, 0.0];
            }
            "histogram" => {
                c.upsilon = 15.0;
                c.n_paths = 5000;
                c.initial = [0.0, 0.0];
            }
            "msd" => {
                c.upsilon = 15.0;
                c.horizon = 512.0;
                c.initial = [0.0, 0.0];
                c.stride = 4;
            }
            "exp-moment" => {
                c.tau = pow2(10);
                c.n_paths = 10_000;
            }
            "jacobian" | "phase-area" => {
                c.scheme = ConservativeMap::SymplecticEuler;
                c.upsilon = 2.0;
                c.tau = 1e-4;
                c.stride = 100;
                c.n_draws = 100;
            }
            "dissipation-demo" => {
                c.tau = pow2(10);
                c.initial = [0.0, 2.0];
                c.n_paths = 10_000;
            }
            _ => {}
        }
        Ok(c)
    }

    /// Defaults of `experiment` overlaid with the keys of a TOML document.
    pub fn from_toml(experiment: &str, text: &str) -> Result<Self, CliError> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut base =
            toml::Table::try_from(Self::defaults(experiment)?).map_err(|e| CliError::Config(e.to_string()))?;
        for (k, v) in overlay {
            if k == "experiment" {
                continue;
            }
            if !base.contains_key(&k) {
                return Err(CliError::Config(format!("unknown key '{k}'")));
            }
            base.insert(k, v);
        }
        let cfg: RunConfig =
            toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Experiment named in a TOML document, if any.
    pub fn experiment_in(text: &str) -> Result<Option<String>, CliError> {
        let t: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        match t.get("experiment") {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(CliError::Config("'experiment' must be a string".into())),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("upsilon", self.upsilon),
            ("tau", self.tau),
            ("fine_dt", self.fine_dt),
            ("sample_dt", self.sample_dt),
            ("fit_window", self.fit_window),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Config(format!("'{name}' must be positive, got {v}")));
            }
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(CliError::Config(format!("'sigma' must be non-negative, got {}", self.sigma)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(CliError::Config(format!("'horizon' must be non-negative, got {}", self.horizon)));
        }
        Ok(())
    }
}
