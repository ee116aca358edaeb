//! Study configuration: attribute levels, question counts, optimizer budgets and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::form::{default_eta_grid, default_gamma};
use crate::geometry::DesignVector;
use crate::overall::McmcConfig;
use crate::rank_svm::SolverOptions;
use crate::sampler::{GaConfig, SamplingWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub levels: Vec<String>,
}

pub fn default_attributes() -> Vec<AttributeSpec> {
    let l = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
    vec![
        AttributeSpec {
            name: "price".into(),
            levels: l(&["$23K", "$25K", "$26K", "$29K", "$31K"]),
        },
        AttributeSpec {
            name: "mpg".into(),
            levels: l(&["23/27", "23/29", "24/30", "25/31", "26/32"]),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSpec {
    pub form: usize,
    pub purchase: usize,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        ValidationSpec { form: 5, purchase: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtaConfig {
    /// Weight for the first respondent.
    pub first: f64,
    /// Weight for the last expected respondent.
    pub last: f64,
    pub expected_respondents: usize,
    pub grid: Vec<f64>,
}

impl Default for EtaConfig {
    fn default() -> Self {
        EtaConfig {
            first: 1.0,
            last: 0.7,
            expected_respondents: 100,
            grid: default_eta_grid(),
        }
    }
}

impl EtaConfig {
    pub fn schedule(&self, index: usize) -> f64 {
        let n = self.expected_respondents;
        if n <= 1 {
            return self.first;
        }
        let t = (index.clamp(1, n) - 1) as f64 / (n - 1) as f64;
        self.first + (self.last - self.first) * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub attributes: Vec<AttributeSpec>,
    pub rounds: usize,
    pub first_pair: [DesignVector; 2],
    pub ga_first: GaConfig,
    pub ga_second: GaConfig,
    pub weights: SamplingWeights,
    pub eta: EtaConfig,
    pub gamma: f64,
    pub solver: SolverOptions,
    /// Margin targets for "better" and "much better".
    pub margins: [f64; 2],
    pub overall_margin: f64,
    pub validation: ValidationSpec,
    pub mcmc: McmcConfig,
    pub seed: u64,
    pub idle_timeout_hours: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_budget_ms: Option<u64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            attributes: default_attributes(),
            rounds: 10,
            first_pair: [DesignVector::uniform(0.35), DesignVector::uniform(0.65)],
            ga_first: GaConfig::first_form(),
            ga_second: GaConfig::second_form(),
            weights: SamplingWeights::default(),
            eta: EtaConfig::default(),
            gamma: default_gamma(),
            solver: SolverOptions::default(),
            margins: [1.0, 2.0],
            overall_margin: 1.0,
            validation: ValidationSpec::default(),
            mcmc: McmcConfig::default(),
            seed: 1,
            idle_timeout_hours: 24.0,
            latency_budget_ms: None,
        }
    }
}

/// Deserializes with the offending field path attached to any error.
pub fn from_json_with_path<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(s);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
    })
}

impl StudyConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: StudyConfig = from_json_with_path(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn n_levels(&self) -> usize {
        self.attributes.first().map_or(0, |a| a.levels.len())
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Length of `[s, a]`.
    pub fn utility_dim(&self) -> usize {
        1 + self.n_attributes() * (self.n_levels() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::config("attributes", "at least one function attribute is required"));
        }
        let n = self.attributes[0].levels.len();
        for (k, a) in self.attributes.iter().enumerate() {
            if a.levels.len() < 2 {
                return Err(Error::config(format!("attributes[{k}].levels"), "need at least two levels"));
            }
            if a.levels.len() != n {
                return Err(Error::config(format!("attributes[{k}].levels"), "all attributes must share one level count"));
            }
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        self.ga_first.validate("ga_first")?;
        self.ga_second.validate("ga_second")?;
        self.weights.validate()?;
        let e = &self.eta;
        for (name, v) in [("eta.first", e.first), ("eta.last", e.last)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if e.grid.is_empty() || e.grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("eta.grid", "must be a nonempty list of values in [0, 1]"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config("gamma", "must be positive"));
        }
        if !(self.solver.cap > 0.0) {
            return Err(Error::config("solver.cap", "must be positive"));
        }
        if self.margins.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::config("margins", "must be positive"));
        }
        if !(self.overall_margin.is_finite() && self.overall_margin > 0.0) {
            return Err(Error::config("overall_margin", "must be positive"));
        }
        if self.validation.form == 0 && self.validation.purchase == 0 {
            return Err(Error::config("validation", "validation block must contain at least one question"));
        }
        self.mcmc.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(path, message),
            other => other,
        })?;
        if !(self.idle_timeout_hours > 0.0) {
            return Err(Error::config("idle_timeout_hours", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = StudyConfig::default();
        c.validate().unwrap();
        let back = StudyConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.utility_dim(), 9);
    }

    #[test]
    fn bad_field_reports_its_path() {
        let err = StudyConfig::from_json(r#"{"ga_first": {"population_size": "many"}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "ga_first.population_size"),
            other => panic!("{other}"),
        }
        let err = StudyConfig::from_json(r#"{"first_pair": [[0.5], [0.5]]}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path.starts_with("first_pair")), "{err}");
    }

    #[test]
    fn empty_validation_block_is_rejected_at_load() {
        let err = StudyConfig::from_json(r#"{"validation": {"form": 0, "purchase": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "validation"));
    }

    #[test]
    fn eta_schedule_uses_endpoints() {
        let e = EtaConfig::default();
        assert_eq!(e.schedule(1), 1.0);
        assert!((e.schedule(100) - 0.7).abs() < 1e-15);
    }
}
