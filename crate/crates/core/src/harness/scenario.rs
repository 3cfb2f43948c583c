//! Scenario files: the declarative description of one experiment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canceller::{Algorithm, CancellerConfig};
use crate::channel::ChannelSpec;
use crate::signals::SegmentSchedule;

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration problem, located by JSON field path and source position.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}{path}: {message}", location.map(|(l, c)| format!("line {l}, column {c}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub path: String,
    pub message: String,
    pub location: Option<(usize, usize)>,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into(), location: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { first: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { first, count } => (*first..first + count).collect(),
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_sin() -> f64 {
    50.0
}

fn default_window() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub schedule: SegmentSchedule,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default = "default_sin")]
    pub si_to_noise_db: f64,
    pub cancellers: Vec<CancellerConfig>,
    pub seeds: SeedSpec,
    /// Sliding window `W` of the reported MSE.
    #[serde(default = "default_window")]
    pub mse_window: usize,
    /// Directory that relative LUT paths resolve against; set by the loader.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.seeds()
    }

    pub fn labels(&self) -> Vec<String> {
        self.cancellers.iter().map(CancellerConfig::label).collect()
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = SeedSpec::List(seeds);
        self
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        match &self.base_dir {
            Some(dir) if Path::new(path).is_relative() => dir.join(path),
            _ => PathBuf::from(path),
        }
    }

    /// Semantic checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.cancellers.is_empty() {
            return Err(ConfigError::new("cancellers", "at least one canceller is required"));
        }
        if self.seed_list().is_empty() {
            return Err(ConfigError::new("seeds", "at least one seed is required"));
        }
        if !self.si_to_noise_db.is_finite() {
            return Err(ConfigError::new("si_to_noise_db", "must be finite"));
        }
        if self.mse_window == 0 || self.mse_window >= self.schedule.len() {
            return Err(ConfigError::new(
                "mse_window",
                format!("must be in 1..{} (schedule length)", self.schedule.len()),
            ));
        }
        self.channel.validate().map_err(|e| ConfigError::new("channel", e.to_string()))?;
        let mut labels = BTreeSet::new();
        for (i, c) in self.cancellers.iter().enumerate() {
            let path = format!("cancellers[{i}]");
            c.validate().map_err(|e| ConfigError::new(path.clone(), e.to_string()))?;
            if !labels.insert(c.label()) {
                return Err(ConfigError::new(format!("{path}.label"), format!("duplicate label '{}'", c.label())));
            }
            if c.algorithm != Algorithm::Lut && c.lut_path.is_some() {
                return Err(ConfigError::new(format!("{path}.lut_path"), "only aop-lut cancellers take a LUT"));
            }
        }
        Ok(())
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError {
            path,
            message: inner.to_string(),
            location: Some((inner.line(), inner.column())),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(path.display().to_string(), format!("cannot read: {e}")))?;
    let mut cfg = parse_scenario(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "schedule": {"segments": [{"distribution": {"kind": "qam", "order": 16}, "duration": 500}]},
        "cancellers": [{"algorithm": "aop", "order": 5}],
        "seeds": [1, 2]
    }"#;

    #[test]
    fn minimal_defaults() {
        let cfg = parse_scenario(MINIMAL).unwrap();
        assert_eq!(cfg.si_to_noise_db, 50.0);
        assert_eq!(cfg.mse_window, 100);
        assert_eq!(cfg.channel.pa.memory, 9);
        assert_eq!(cfg.seed_list(), vec![1, 2]);
        assert_eq!(cfg.labels(), vec!["aop"]);
    }

    #[test]
    fn seed_range() {
        let text = MINIMAL.replace(r#""seeds": [1, 2]"#, r#""seeds": {"first": 10, "count": 3}"#);
        assert_eq!(parse_scenario(&text).unwrap().seed_list(), vec![10, 11, 12]);
    }

    #[test]
    fn errors_carry_paths() {
        let text = MINIMAL.replace(r#""order": 16"#, r#""order": "sixteen""#);
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.path.starts_with("schedule.segments[0].distribution"), "{err}");
        assert!(err.location.is_some());

        let text = MINIMAL.replace(r#""order": 5"#, r#""order": 4"#);
        assert_eq!(parse_scenario(&text).unwrap_err().path, "cancellers[0]");

        let text = MINIMAL.replace(r#""duration": 500"#, r#""duration": 0"#);
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.message.contains("zero duration"), "{err}");

        let text = MINIMAL.replace(r#""seeds": [1, 2]"#, r#""seeds": []"#);
        assert_eq!(parse_scenario(&text).unwrap_err().path, "seeds");

        let text = MINIMAL.replace(r#"{"algorithm": "aop", "order": 5}"#, r#"{"algorithm": "aop"}, {"algorithm": "aop"}"#);
        assert_eq!(parse_scenario(&text).unwrap_err().path, "cancellers[1].label");

        let text = MINIMAL.replace(r#""name": "t","#, r#""name": "t", "colour": 3,"#);
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn empty_schedule_is_rejected() {
        let text = MINIMAL.replace(
            r#"[{"distribution": {"kind": "qam", "order": 16}, "duration": 500}]"#,
            "[]",
        );
        assert!(parse_scenario(&text).unwrap_err().message.contains("no segments"));
    }
}
