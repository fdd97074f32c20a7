//! TOML configuration covering every tunable component.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::AffinityParams;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::registration::{AlignParams, Method};
use crate::sim::ScenarioConfig;
use crate::solver::SolverOptions;
use crate::submap::SubmapPolicy;
use crate::tracking::TrackerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// `densest`, `prune`, `topk` or `ransac`.
    pub method: String,
    pub prune_threshold: f64,
    pub gravity_reject_tol_deg: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            method: "densest".into(),
            prune_threshold: 0.5,
            gravity_reject_tol_deg: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub affinity: AffinityParams,
    pub solver: SolverOptions,
    pub registration: RegistrationConfig,
    pub submap: SubmapPolicy,
    pub tracking: TrackerConfig,
    pub scenario: ScenarioConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.affinity.validate()?;
        self.submap.validate()?;
        self.scenario.validate()?;
        self.method()?;
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        parse_method(&self.registration.method, self)
    }

    pub fn align_params(&self) -> Result<AlignParams> {
        Ok(AlignParams {
            affinity: self.affinity.clone(),
            solver: self.solver.clone(),
            method: self.method()?,
            tau: self.submap.tau,
            gravity_reject_tol_deg: self.registration.gravity_reject_tol_deg,
        })
    }
}

fn parse_method(name: &str, cfg: &Config) -> Result<Method> {
    match name.to_ascii_lowercase().as_str() {
        "densest" | "clipper" => Ok(Method::Densest),
        "prune" => Ok(Method::Prune {
            threshold: cfg.registration.prune_threshold,
        }),
        "topk" | "binary_topk" => Ok(Method::BinaryTopK { k: cfg.solver.topk }),
        "ransac" => Ok(Method::Ransac {
            iters: cfg.solver.ransac_iters,
            inlier_tol: cfg.solver.ransac_inlier_tol,
        }),
        other => Err(Error::Config(format!("unknown registration method '{other}'"))),
    }
}
