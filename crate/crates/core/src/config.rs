//! On-disk model description.
//!
//! ```json
//! { "velocities": [20, -15, 0], "rates": [1, 0.5, 0.3],
//!   "probs": {"p12": 0.2, "p21": 0.3, "p31": 0.7},
//!   "init": {"weights": "stationary",
//!            "profile": {"type": "gaussian", "sigma": 5.0},
//!            "domain_half_width": 40.0} }
//! ```
//!
//! Unknown keys are rejected. `init` may be omitted, in which case the
//! stationary weights, a ς = 5 Gaussian and L = 40 are used.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::initial::{InitError, InitialCondition, InitialWeights, Profile};
use crate::model::{validate_params, ModelError, ModelParams, RawParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid weights keyword {0:?}, expected \"stationary\" or a 3-vector")]
    WeightsKeyword(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Init(#[from] InitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbsSpec {
    pub p12: f64,
    pub p21: f64,
    pub p31: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Explicit([f64; 3]),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProfileSpec {
    Gaussian { sigma: f64 },
    Tabulated { x: Vec<f64>, f: Vec<f64> },
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Gaussian { sigma: 5.0 }
    }
}

fn default_half_width() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub weights: WeightsSpec,
    #[serde(default)]
    pub profile: ProfileSpec,
    #[serde(default = "default_half_width")]
    pub domain_half_width: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            weights: WeightsSpec::Keyword("stationary".into()),
            profile: ProfileSpec::default(),
            domain_half_width: default_half_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub velocities: [f64; 3],
    pub rates: [f64; 3],
    pub probs: ProbsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
}

impl ModelFile {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let file: ModelFile = serde_json::from_str(text)?;
        // Validate eagerly so a bad file fails at load time.
        file.params()?;
        file.initial_condition()?;
        Ok(file)
    }

    pub fn from_params(theta: &ModelParams, init: Option<InitSpec>) -> Self {
        let [p12, p21, p31] = theta.probs();
        ModelFile {
            velocities: theta.velocities(),
            rates: theta.rates(),
            probs: ProbsSpec { p12, p21, p31 },
            init,
        }
    }

    pub fn params(&self) -> Result<ModelParams, ModelError> {
        validate_params(RawParams {
            velocities: self.velocities,
            rates: self.rates,
            p12: self.probs.p12,
            p21: self.probs.p21,
            p31: self.probs.p31,
        })
    }

    pub fn init_spec(&self) -> InitSpec {
        self.init.clone().unwrap_or_default()
    }

    pub fn initial_weights(&self) -> Result<InitialWeights, ConfigError> {
        match self.init_spec().weights {
            WeightsSpec::Explicit(a) => Ok(InitialWeights::Explicit(a)),
            WeightsSpec::Keyword(k) if k == "stationary" => Ok(InitialWeights::Stationary),
            WeightsSpec::Keyword(k) => Err(ConfigError::WeightsKeyword(k)),
        }
    }

    pub fn profile(&self) -> Result<Profile, InitError> {
        match self.init_spec().profile {
            ProfileSpec::Gaussian { sigma } => Profile::gaussian(sigma),
            ProfileSpec::Tabulated { x, f } => Profile::tabulated(x, f),
        }
    }

    /// Initial condition with `"stationary"` weights resolved against this model.
    pub fn initial_condition(&self) -> Result<InitialCondition, ConfigError> {
        let theta = self.params()?;
        let weights = self.initial_weights()?.resolve(&theta)?;
        Ok(InitialCondition::new(
            weights,
            self.profile()?,
            self.init_spec().domain_half_width,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THETA_A: &str = r#"{
        "velocities": [20, -15, 0], "rates": [1, 0.5, 0.3],
        "probs": {"p12": 0.2, "p21": 0.3, "p31": 0.7},
        "init": {"weights": "stationary",
                 "profile": {"type": "gaussian", "sigma": 5.0},
                 "domain_half_width": 40.0}
    }"#;

    #[test]
    fn parses_reference_model() {
        let file = ModelFile::from_json_str(THETA_A).unwrap();
        let ic = file.initial_condition().unwrap();
        assert!((ic.weights[0] - 237.0 / 1441.0).abs() < 1e-12);
        assert_eq!(file.initial_weights().unwrap(), InitialWeights::Stationary);
        assert_eq!(ic.half_width, 40.0);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = THETA_A.replace("\"rates\"", "\"rate_typo\": 1, \"rates\"");
        assert!(matches!(
            ModelFile::from_json_str(&bad),
            Err(ConfigError::Parse(_))
        ));
        let bad = THETA_A.replace("\"sigma\": 5.0", "\"sigma\": 5.0, \"mu\": 0");
        assert!(matches!(
            ModelFile::from_json_str(&bad),
            Err(ConfigError::Parse(_))
        ));
        let bad = THETA_A.replace("\"p31\": 0.7", "\"p31\": 0.7, \"p13\": 0.8");
        assert!(ModelFile::from_json_str(&bad).is_err());
    }

    #[test]
    fn explicit_weights_and_defaults() {
        let text = r#"{"velocities": [1, 2, 3], "rates": [1, 1, 1],
            "probs": {"p12": 0.5, "p21": 0.5, "p31": 0.5},
            "init": {"weights": [1, 0, 0]}}"#;
        let ic = ModelFile::from_json_str(text)
            .unwrap()
            .initial_condition()
            .unwrap();
        assert_eq!(ic.weights, [1.0, 0.0, 0.0]);
        assert_eq!(ic.profile, Profile::Gaussian { sigma: 5.0 });
        let text = r#"{"velocities": [1, 2, 3], "rates": [1, 1, 1],
            "probs": {"p12": 0.5, "p21": 0.5, "p31": 0.5}}"#;
        let ic = ModelFile::from_json_str(text)
            .unwrap()
            .initial_condition()
            .unwrap();
        assert!((ic.weights[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = THETA_A.replace("\"stationary\"", "\"uniform\"");
        assert!(matches!(
            ModelFile::from_json_str(&bad),
            Err(ConfigError::WeightsKeyword(_))
        ));
        let bad = THETA_A.replace("[1, 0.5, 0.3]", "[1, 0, 0.3]");
        assert!(matches!(
            ModelFile::from_json_str(&bad),
            Err(ConfigError::Model(_))
        ));
        assert!(ModelFile::from_json_str("{ not json").is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let file = ModelFile::from_json_str(THETA_A).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        assert_eq!(ModelFile::from_json_str(&text).unwrap(), file);
    }
}
