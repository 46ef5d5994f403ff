//! Run configuration: JSON schema, defaults, validation and the canonical hash.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spikelab_core::geometry::DomainSpec;
use spikelab_core::groundstate::check_exponent;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GroundState,
    Constants,
    Landscape,
    Predict,
    VerifyExpansion,
    VerifyProposition,
    VerifyGradient,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::GroundState,
        Task::Constants,
        Task::Landscape,
        Task::Predict,
        Task::VerifyExpansion,
        Task::VerifyProposition,
        Task::VerifyGradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::GroundState => "ground-state",
            Task::Constants => "constants",
            Task::Landscape => "landscape",
            Task::Predict => "predict",
            Task::VerifyExpansion => "verify-expansion",
            Task::VerifyProposition => "verify-proposition",
            Task::VerifyGradient => "verify-gradient",
        }
    }

    fn needs_domain(self) -> bool {
        self != Task::GroundState
    }

    fn needs_q(self) -> bool {
        matches!(
            self,
            Task::Constants | Task::VerifyExpansion | Task::VerifyProposition | Task::VerifyGradient
        )
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Task::ALL.iter().map(|t| t.name()).collect();
                format!("unknown task '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// Domain as written in a config file. An implicit domain is a bare expression string whose
/// bounding box comes from the top-level `bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainConfig {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Ellipsoid {
        semi_axes: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    Implicit(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Ground-state `α★` tolerance.
    pub ground_state: f64,
    /// Gradient-norm tolerance for critical points.
    pub stationarity: f64,
    /// Relative eigenvalue threshold below which a critical point is degenerate.
    pub degeneracy: f64,
    /// Finite-difference step for boundary Hessians.
    pub hessian_step: f64,
    /// Multistart seeds for the predictor.
    pub max_starts: usize,
    /// Samples used to certify `J, V > 0` on the closed domain.
    pub validation_samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ground_state: 1e-10,
            stationarity: 1e-9,
            degeneracy: 1e-6,
            hessian_step: 1e-4,
            max_starts: 100,
            validation_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Truncation radius in units of `1/β`.
    #[serde(rename = "R")]
    pub r: f64,
    /// Subdivision depth of cut cells.
    pub depth: usize,
    pub order: usize,
    pub max_cell: f64,
    pub core_radius: f64,
    pub core_cell: f64,
    /// Tangential finite-difference step for energy gradients.
    pub fd_step: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            r: 30.0,
            depth: 8,
            order: 10,
            max_cell: 2.0,
            core_radius: 3.0,
            core_cell: 0.5,
            fd_step: 1e-3,
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_field() -> String {
    "1".into()
}

fn default_schedule() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}

fn default_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    #[serde(rename = "J", default = "default_field")]
    pub j: String,
    #[serde(rename = "V", default = "default_field")]
    pub v: String,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default = "default_schedule")]
    pub eps_schedule: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the command line takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn count(field: &str, v: usize) -> Result<(), CliError> {
    if v > 0 {
        Ok(())
    } else {
        Err(invalid(field, "must be at least 1"))
    }
}

fn finite_point(field: &str, x: &[f64], n: usize) -> Result<(), CliError> {
    if x.len() != n {
        return Err(invalid(field, format!("must have N = {n} entries, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without numerics for `task`.
    pub fn validate(&self, task: Task) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (this build reads {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if let Some(t) = self.task {
            if t != task {
                return Err(invalid("task", format!("config names '{t}' but '{task}' was requested")));
            }
        }
        check_exponent(self.n, self.p).map_err(|e| invalid(if self.n == 0 { "N" } else { "p" }, e.to_string()))?;

        let t = &self.tolerances;
        positive("tolerances.ground_state", t.ground_state)?;
        positive("tolerances.stationarity", t.stationarity)?;
        positive("tolerances.degeneracy", t.degeneracy)?;
        positive("tolerances.hessian_step", t.hessian_step)?;
        count("tolerances.max_starts", t.max_starts)?;
        count("tolerances.validation_samples", t.validation_samples)?;
        let q = &self.quadrature;
        positive("quadrature.R", q.r)?;
        count("quadrature.depth", q.depth)?;
        if q.order < 4 {
            return Err(invalid("quadrature.order", "must be at least 4"));
        }
        positive("quadrature.max_cell", q.max_cell)?;
        positive("quadrature.core_cell", q.core_cell)?;
        positive("quadrature.fd_step", q.fd_step)?;
        if !(q.core_radius.is_finite() && q.core_radius >= 0.0) {
            return Err(invalid("quadrature.core_radius", "must be finite and non-negative"));
        }
        count("samples", self.samples)?;

        if task.needs_domain() {
            if self.domain.is_none() {
                return Err(invalid("domain", format!("required for task '{task}'")));
            }
            if let Some(DomainConfig::Implicit(_)) = self.domain {
                let b = self
                    .bounds
                    .as_ref()
                    .ok_or_else(|| invalid("bounds", "required for an implicit domain"))?;
                finite_point("bounds.lower", &b.lower, self.n)?;
                finite_point("bounds.upper", &b.upper, self.n)?;
            }
        }
        if task.needs_q() {
            let q = self.q.as_ref().ok_or_else(|| invalid("Q", format!("required for task '{task}'")))?;
            finite_point("Q", q, self.n)?;
        }
        if matches!(task, Task::VerifyExpansion | Task::VerifyProposition | Task::VerifyGradient) {
            let s = &self.eps_schedule;
            let need = if task == Task::VerifyExpansion { 3 } else { 2 };
            let need = if task == Task::VerifyGradient { 1 } else { need };
            if s.len() < need {
                return Err(invalid(
                    "eps_schedule",
                    format!("needs at least {need} values for '{task}', got {}", s.len()),
                ));
            }
            if s.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(invalid("eps_schedule", "values must be positive"));
            }
            if s.windows(2).any(|w| w[1] >= w[0]) {
                return Err(invalid("eps_schedule", "must be strictly decreasing"));
            }
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Option<DomainSpec> {
        Some(match self.domain.as_ref()? {
            DomainConfig::Ball { center, radius } => DomainSpec::Ball {
                center: center.clone(),
                radius: *radius,
            },
            DomainConfig::Ellipsoid { semi_axes, center } => DomainSpec::Ellipsoid {
                semi_axes: semi_axes.clone(),
                center: center.clone(),
            },
            DomainConfig::Implicit(expr) => {
                let b = self.bounds.as_ref()?;
                DomainSpec::Implicit {
                    expr: expr.clone(),
                    lower: b.lower.clone(),
                    upper: b.upper.clone(),
                }
            }
        })
    }

    /// SHA-256 of the canonical serialization of the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(r#"{"N": 3, "p": 3, "task": "ground-state"}"#).unwrap();
        assert_eq!(c.eps_schedule, vec![0.2, 0.1, 0.05, 0.025]);
        assert_eq!(c.samples, 10_000);
        assert_eq!(c.quadrature.r, 30.0);
        assert_eq!(c.quadrature.depth, 8);
        assert_eq!(c.v, "1");
        c.validate(Task::GroundState).unwrap();
    }

    #[test]
    fn supercritical_exponent_names_p() {
        let c = RunConfig::from_json(r#"{"N": 3, "p": 5}"#).unwrap();
        match c.validate(Task::GroundState) {
            Err(CliError::Validation { field, message }) => {
                assert_eq!(field, "p");
                assert!(message.contains("subcritical"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn domain_forms() {
        let c = RunConfig::from_json(
            r#"{"N": 2, "p": 3, "domain": {"implicit": "x1^2 + x2^2 - 1"},
                "bounds": {"lower": [-1.5, -1.5], "upper": [1.5, 1.5]}}"#,
        )
        .unwrap();
        c.validate(Task::Landscape).unwrap();
        assert!(matches!(c.domain_spec(), Some(DomainSpec::Implicit { .. })));
        let c = RunConfig::from_json(r#"{"N": 3, "p": 3, "domain": {"ellipsoid": {"semi_axes": [1, 1, 2]}}}"#).unwrap();
        assert!(matches!(c.domain_spec(), Some(DomainSpec::Ellipsoid { center: None, .. })));
        let c = RunConfig::from_json(r#"{"N": 2, "p": 3, "domain": {"implicit": "x1^2 + x2^2 - 1"}}"#).unwrap();
        assert!(c.validate(Task::Landscape).is_err());
    }

    #[test]
    fn field_errors_are_named() {
        let c = RunConfig::from_json(r#"{"N": 3, "p": 3, "tolerances": {"stationarity": -1}}"#).unwrap();
        match c.validate(Task::GroundState) {
            Err(CliError::Validation { field, .. }) => assert_eq!(field, "tolerances.stationarity"),
            other => panic!("{other:?}"),
        }
        let c = RunConfig::from_json(r#"{"N": 3, "p": 3, "domain": {"ball": {"center": [0,0,0], "radius": 1}}, "eps_schedule": [0.1]}"#).unwrap();
        assert!(c.validate(Task::Constants).is_err());
        let c = RunConfig {
            q: Some(vec![1.0, 0.0, 0.0]),
            ..c
        };
        assert!(c.validate(Task::VerifyExpansion).is_err());
        assert!(RunConfig::from_json(r#"{"N": 3, "p": 3, "bogus": 1}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(r#"{"N": 3, "p": 3}"#).unwrap();
        let b = RunConfig::from_json(r#"{ "p": 3, "N": 3 }"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
