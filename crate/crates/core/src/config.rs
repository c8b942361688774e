//! JSON configuration files: model descriptions and experiment settings.
//!
//! A model lists its components, each a kernel plus a function given either
//! as monomial coefficients or as Hermite coefficients:
//!
//! ```json
//! {
//!   "h": 0.6,
//!   "components": [
//!     { "kernel": { "variant": "exponential", "params": { "sigma": 1.0, "theta": 1.0 } },
//!       "function": { "polynomial": [-1.0, 0.0, 1.0] } }
//!   ]
//! }
//! ```
//!
//! `"car2": { "theta0": -2, "theta1": -3 }` is shorthand for the two CAR(2)
//! components `X` and `Ẋ`, both using `function` (default `x² - 1`).

use serde::{Deserialize, Serialize};

use crate::asymptotics::ModelSpec;
use crate::car2::Car2Params;
use crate::error::{Error, Result};
use crate::fgn::HurstParam;
use crate::hermite::{monomial_to_hermite, HermiteExpansion, PolynomialSpec};
use crate::kernels::KernelSpec;
use crate::mc::ExperimentConfig;
use crate::sim::FunctionalKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionSpec {
    /// Coefficients of `1, x, x², ...`.
    Polynomial(PolynomialSpec),
    /// Coefficients of `H_0, H_1, ...` (`H_0` must vanish).
    Hermite(HermiteExpansion),
}

impl FunctionSpec {
    pub fn expansion(&self) -> Result<HermiteExpansion> {
        match self {
            FunctionSpec::Polynomial(p) => monomial_to_hermite(p),
            FunctionSpec::Hermite(e) => Ok(e.clone()),
        }
    }

    /// `x² - 1`.
    pub fn second_hermite() -> Self {
        FunctionSpec::Hermite(HermiteExpansion::single(2).expect("level 2 is valid"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub kernel: KernelSpec,
    pub function: FunctionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Car2Config {
    pub theta0: f64,
    pub theta1: f64,
    #[serde(default = "FunctionSpec::second_hermite")]
    pub function: FunctionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub h: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car2: Option<Car2Config>,
}

impl ModelConfig {
    /// Shape-checked model; the theorems' hypotheses are left to callers.
    pub fn to_model_unchecked(&self) -> Result<ModelSpec> {
        let h = HurstParam::new(self.h)?;
        let mut kernels = Vec::new();
        let mut expansions = Vec::new();
        if let Some(c) = &self.car2 {
            let params = Car2Params::new(c.theta0, c.theta1)?;
            let (k1, k2) = params.kernels()?;
            let e = c.function.expansion()?;
            kernels.extend([k1, k2]);
            expansions.extend([e.clone(), e]);
        }
        for c in &self.components {
            kernels.push(c.kernel.clone());
            expansions.push(c.function.expansion()?);
        }
        ModelSpec::unchecked(h, kernels, expansions)
    }

    pub fn to_model(&self) -> Result<ModelSpec> {
        let m = self.to_model_unchecked()?;
        m.check_hypotheses()?;
        Ok(m)
    }
}

/// Contents of an experiment file for `clt-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub model: ModelConfig,
    #[serde(default = "default_functional")]
    pub functional: FunctionalKind,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub force: bool,
}

fn default_functional() -> FunctionalKind {
    FunctionalKind::V
}
fn default_horizon() -> f64 {
    200.0
}
/// `2⁻⁶`.
pub fn default_dt() -> f64 {
    1.0 / 64.0
}
fn default_paths() -> usize {
    2000
}
fn default_workers() -> usize {
    1
}

impl ExperimentFile {
    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let model = if self.force {
            self.model.to_model_unchecked()?
        } else {
            self.model.to_model()?
        };
        Ok(ExperimentConfig {
            model,
            functional: self.functional,
            horizon: self.horizon,
            dt: self.dt,
            n_paths: self.n_paths,
            master_seed: self.master_seed,
            workers: self.workers,
            force: self.force,
        })
    }
}

/// Parses JSON, mapping syntax and schema errors to `InvalidInput`.
pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_component() {
        let cfg: ModelConfig = from_json(
            r#"{"h":0.6,"components":[{"kernel":{"variant":"exponential","params":{"sigma":1.0,"theta":1.0}},
                 "function":{"polynomial":[-1.0,0.0,1.0]}}]}"#,
        )
        .unwrap();
        let m = cfg.to_model().unwrap();
        assert_eq!(m.expansions[0].rank(), 2);
    }

    #[test]
    fn car2_shorthand() {
        let cfg: ModelConfig = from_json(r#"{"h":0.6,"car2":{"theta0":-2,"theta1":-3}}"#).unwrap();
        let m = cfg.to_model().unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.expansions[1], HermiteExpansion::single(2).unwrap());
    }

    #[test]
    fn hypotheses_enforced_unless_forced() {
        let text = r#"{"model":{"h":0.8,"car2":{"theta0":-2,"theta1":-3}}}"#;
        let f: ExperimentFile = from_json(text).unwrap();
        assert!(matches!(f.to_experiment(), Err(Error::Validation(_))));
        let mut forced = f.clone();
        forced.force = true;
        assert!(forced.to_experiment().is_ok());
        assert!(from_json::<ModelConfig>(r#"{"h":0.6,"bogus":1}"#).is_err());
    }
}
