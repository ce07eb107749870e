//! Scenario configuration, read from TOML.
//!
//! ```toml
//! model = "linear"            # linear | nonlinear | ihdp
//! n = 1000
//! covariate_dim = 10
//! rho = 0.5
//! mu0 = 0.0
//! mu1 = 5.0
//! beta = 0.1                  # constant coefficient, or "ihdp-discrete"
//! alpha = [0.25, 0.5, 0.75]
//! r2_target = [0.2, 0.5]
//! r1 = [0.5, 0.2]
//! acceptance_probability = 0.001
//! replications = 2000
//! miscoverage = 0.05
//! bandwidth = "n^-1/3"        # or a positive number
//! master_seed = 20240601
//! workers = 4
//! # covariate_file = "ihdp_covariates.csv"   # ihdp only
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::popmodel::default_bandwidth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Linear,
    Nonlinear,
    Ihdp,
}

/// Outcome coefficients: `β = c 1_p`, or i.i.d. draws over `{0,...,4}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaRule {
    Constant(f64),
    IhdpDiscrete,
}

impl Serialize for BetaRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BetaRule::Constant(c) => s.serialize_f64(*c),
            BetaRule::IhdpDiscrete => s.serialize_str(IHDP_BETA),
        }
    }
}

const IHDP_BETA: &str = "ihdp-discrete";
const BANDWIDTH_RULE: &str = "n^-1/3";

#[derive(Deserialize)]
#[serde(untagged)]
enum NumberOrName {
    Number(f64),
    Name(String),
}

impl<'de> Deserialize<'de> for BetaRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumberOrName::deserialize(d)? {
            NumberOrName::Number(c) => Ok(BetaRule::Constant(c)),
            NumberOrName::Name(s) if s == IHDP_BETA => Ok(BetaRule::IhdpDiscrete),
            NumberOrName::Name(s) => Err(serde::de::Error::custom(format!(
                "beta must be a number or \"{IHDP_BETA}\", got {s:?}"
            ))),
        }
    }
}

/// Kernel bandwidth: `n^{-1/3}` or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    CubeRootRule,
    Fixed(f64),
}

impl Bandwidth {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            Bandwidth::CubeRootRule => default_bandwidth(n),
            Bandwidth::Fixed(h) => *h,
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::CubeRootRule => s.serialize_str(BANDWIDTH_RULE),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumberOrName::deserialize(d)? {
            NumberOrName::Number(h) => Ok(Bandwidth::Fixed(h)),
            NumberOrName::Name(s) if s == BANDWIDTH_RULE => Ok(Bandwidth::CubeRootRule),
            NumberOrName::Name(s) => Err(serde::de::Error::custom(format!(
                "bandwidth must be a number or \"{BANDWIDTH_RULE}\", got {s:?}"
            ))),
        }
    }
}

fn default_bandwidth_rule() -> Bandwidth {
    Bandwidth::CubeRootRule
}

fn default_miscoverage() -> f64 {
    0.05
}

fn default_replications() -> usize {
    2000
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: Model,
    pub n: usize,
    pub covariate_dim: usize,
    #[serde(default)]
    pub rho: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub beta: BetaRule,
    pub alpha: Vec<f64>,
    pub r2_target: Vec<f64>,
    pub r1: Vec<f64>,
    pub acceptance_probability: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_miscoverage")]
    pub miscoverage: f64,
    #[serde(default = "default_bandwidth_rule")]
    pub bandwidth: Bandwidth,
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// IHDP covariates (747 rows, 25 columns). A synthetic stand-in is
    /// generated from `master_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_file: Option<PathBuf>,
}

fn in_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {v}"
        )))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::malformed(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `covariate_file` is resolved against
    /// the config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
        let mut cfg =
            Self::from_toml(&text).map_err(|e| e.context(format!("{}", path.display())))?;
        if let (Some(file), Some(dir)) = (&cfg.covariate_file, path.parent()) {
            if file.is_relative() {
                cfg.covariate_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::invalid(format!(
                "n must be at least 8, got {}",
                self.n
            )));
        }
        if self.covariate_dim == 0 {
            return Err(Error::invalid("covariate_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.mu0.is_finite() && self.mu1.is_finite()) {
            return Err(Error::invalid("mu0 and mu1 must be finite"));
        }
        match (self.model, self.beta) {
            (Model::Ihdp, BetaRule::Constant(_)) => {
                return Err(Error::invalid(format!(
                    "the ihdp model draws its coefficients; set beta = \"{IHDP_BETA}\""
                )))
            }
            (Model::Linear | Model::Nonlinear, BetaRule::IhdpDiscrete) => {
                return Err(Error::invalid(
                    "beta = \"ihdp-discrete\" is only available for the ihdp model",
                ))
            }
            (_, BetaRule::Constant(c)) if !c.is_finite() => {
                return Err(Error::invalid("beta must be finite"))
            }
            _ => {}
        }
        if self.model != Model::Ihdp && self.covariate_file.is_some() {
            return Err(Error::invalid(
                "covariate_file is only used by the ihdp model",
            ));
        }
        if self.model == Model::Ihdp && self.covariate_dim != 25 {
            return Err(Error::invalid(format!(
                "the ihdp model has 25 covariates, got covariate_dim = {}",
                self.covariate_dim
            )));
        }
        for (name, list) in [
            ("alpha", &self.alpha),
            ("r2_target", &self.r2_target),
            ("r1", &self.r1),
        ] {
            if list.is_empty() {
                return Err(Error::invalid(format!("{name} needs at least one value")));
            }
            for &v in list.iter() {
                in_open_unit(name, v)?;
            }
        }
        for &r in &self.r2_target {
            if !(r > 0.01 && r < 0.95) {
                return Err(Error::invalid(format!(
                    "r2_target values must lie in (0.01, 0.95), got {r}"
                )));
            }
        }
        for &r in &self.r1 {
            let n1 = self.treated_count(r);
            if n1 < 2 || self.n - n1 < 2 {
                return Err(Error::invalid(format!(
                    "r1 = {r} leaves fewer than two units in an arm"
                )));
            }
        }
        if !(self.acceptance_probability > 0.0 && self.acceptance_probability <= 1.0) {
            return Err(Error::invalid(format!(
                "acceptance_probability must lie in (0, 1], got {}",
                self.acceptance_probability
            )));
        }
        if self.replications < 2 {
            return Err(Error::invalid("replications must be at least 2"));
        }
        in_open_unit("miscoverage", self.miscoverage)?;
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!(
                    "bandwidth must be positive, got {h}"
                )));
            }
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be positive"));
        }
        Ok(())
    }

    /// `n1 = round(r1 n)`.
    pub fn treated_count(&self, r1: f64) -> usize {
        (r1 * self.n as f64).round() as usize
    }

    pub fn beta_constant(&self) -> f64 {
        match self.beta {
            BetaRule::Constant(c) => c,
            BetaRule::IhdpDiscrete => 0.0,
        }
    }
}
