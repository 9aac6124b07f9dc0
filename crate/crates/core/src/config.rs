//! Experiment configuration files.
//!
//! A configuration is a TOML document:
//!
//! ```toml
//! schema_version = 1
//! study = "temporal_weak"
//! seed = 7
//! paths = 2000
//!
//! [model]
//! T = 1.0
//! N = 32
//! M = 128
//!
//! [levels]
//! list = [16, 32, 64, 128]
//! reference = 2048
//!
//! [functional]
//! kind = "gauss_exp"
//! sigma = 1.0
//!
//! [output]
//! dir = "out/temporal_weak"
//! ```
//!
//! Temporal studies vary `M` over `levels.list` with `model.N` modes;
//! spatial studies vary `N` with `model.M` steps. A `report.json` written by
//! a run embeds the resolved configuration and is accepted wherever a
//! configuration file is.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{spatial_subdominance, TestFunctional};
use crate::model::ModelConfig;
use crate::noise::{MAX_MODES, MAX_STEPS};

pub const SCHEMA_VERSION: u32 = 1;

/// Reference resolutions must exceed the finest tested level by these factors.
pub const TIME_REFERENCE_FACTOR: usize = 16;
pub const SPACE_REFERENCE_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    TemporalWeak,
    TemporalStrong,
    SpatialWeak,
    SpatialStrong,
    Invariants,
    LinearOracle,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::TemporalWeak => "temporal_weak",
            Study::TemporalStrong => "temporal_strong",
            Study::SpatialWeak => "spatial_weak",
            Study::SpatialStrong => "spatial_strong",
            Study::Invariants => "invariants",
            Study::LinearOracle => "linear_oracle",
        }
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, Study::TemporalWeak | Study::TemporalStrong | Study::LinearOracle)
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, Study::SpatialWeak | Study::SpatialStrong)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Levels {
    pub list: Vec<usize>,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also write the noise table of path 0 as `noise_table.bin`.
    #[serde(default)]
    pub noise_table: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            noise_table: false,
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_paths() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub study: Study,
    pub seed: u64,
    /// Sample paths `K`.
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub model: ModelConfig,
    /// Required by every study except `invariants`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Levels>,
    #[serde(default)]
    pub functional: TestFunctional,
    #[serde(default)]
    pub output: OutputConfig,
    /// Run spatial studies even when the temporal error is not subdominant.
    #[serde(default)]
    pub allow_temporal_dominance: bool,
}

/// Outcome of [`ExperimentConfig::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub ok_lines: Vec<String>,
    pub warnings: Vec<String>,
    /// `K · Σ M·N` over the reference and every distinct tested level.
    pub cost: u128,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the document starts with `{`. A JSON report
    /// is unwrapped to its embedded `config`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
            let inner = match value.get("config") {
                Some(c) => c.clone(),
                None => value,
            };
            serde_json::from_value(inner).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    fn levels(&self) -> Result<&Levels> {
        self.levels
            .as_ref()
            .ok_or_else(|| Error::Config(format!("study {} needs a [levels] table", self.study.name())))
    }

    /// Every assumption and grid constraint; no computation.
    pub fn validate(&self) -> Result<Validation> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ok_lines = self.model.validate()?;
        let mut warnings = self.model.initial.decay_warnings();
        self.functional.validate()?;
        if self.study == Study::Invariants {
            return Ok(Validation {
                ok_lines,
                warnings,
                cost: 0,
            });
        }
        if self.paths < 2 {
            return Err(Error::Config(format!("paths must be at least 2, got {}", self.paths)));
        }
        let levels = self.levels()?;
        if levels.list.is_empty() {
            return Err(Error::Config("levels.list is empty".into()));
        }
        let reference = levels.reference;
        let coarser: Vec<usize> = levels.list.iter().copied().filter(|&l| l != reference).collect();
        let finest = coarser.iter().copied().max();
        let k = self.paths as u128;
        let cost = if self.study.is_temporal() {
            let n = self.model.n;
            if n > MAX_MODES {
                return Err(Error::Config(format!("N = {n} exceeds the table limit {MAX_MODES}")));
            }
            if reference == 0 || reference > MAX_STEPS {
                return Err(Error::Config(format!("reference M = {reference} must be in 1..={MAX_STEPS}")));
            }
            for &m in &levels.list {
                if m == 0 || reference % m != 0 {
                    return Err(Error::Config(format!(
                        "M = {m} does not divide M_ref = {reference} ({reference} mod {m} = {})",
                        if m == 0 { reference } else { reference % m }
                    )));
                }
            }
            if let Some(f) = finest {
                if reference < TIME_REFERENCE_FACTOR * f {
                    return Err(Error::Config(format!(
                        "M_ref = {reference} must be at least {TIME_REFERENCE_FACTOR} x the finest level {f}"
                    )));
                }
            }
            ok_lines.push(format!("time levels {:?} nest in M_ref = {reference}: OK", levels.list));
            k * (reference as u128 + coarser.iter().map(|&m| m as u128).sum::<u128>()) * n as u128
        } else {
            let m = self.model.m;
            if m > MAX_STEPS {
                return Err(Error::Config(format!("M = {m} exceeds the table limit {MAX_STEPS}")));
            }
            if reference == 0 || reference > MAX_MODES {
                return Err(Error::Config(format!("reference N = {reference} must be in 1..={MAX_MODES}")));
            }
            for &n in &levels.list {
                if n == 0 || n > reference {
                    return Err(Error::Config(format!("N = {n} must be in 1..={reference}")));
                }
            }
            if let Some(f) = finest {
                if reference < SPACE_REFERENCE_FACTOR * f {
                    return Err(Error::Config(format!(
                        "N_ref = {reference} must be at least {SPACE_REFERENCE_FACTOR} x the finest level {f}"
                    )));
                }
            }
            ok_lines.push(format!("mode levels {:?} nest in N_ref = {reference}: OK", levels.list));
            let (ok, temporal, spatial) = spatial_subdominance(self.model.t_end, m, &levels.list);
            let line = format!(
                "temporal error subdominant: tau^(3/4) = {temporal:.3e} <= lambda_N^(-3/2)/4 = {spatial:.3e}"
            );
            if ok {
                ok_lines.push(format!("{line}: OK"));
            } else if self.allow_temporal_dominance {
                warnings.push(format!("{line} violated; allowed by allow_temporal_dominance"));
            } else {
                return Err(Error::Config(format!(
                    "{line} violated (set allow_temporal_dominance = true to run anyway)"
                )));
            }
            k * m as u128 * (reference as u128 + coarser.iter().map(|&n| n as u128).sum::<u128>())
        };
        Ok(Validation {
            ok_lines,
            warnings,
            cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEMPORAL: &str = r#"
schema_version = 1
study = "temporal_weak"
seed = 7
paths = 10

[levels]
list = [16, 32]
reference = 512
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::parse(TEMPORAL).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.functional, TestFunctional::GaussExp { sigma: 1.0 });
        let v = c.validate().unwrap();
        assert_eq!(v.cost, 10 * (512 + 16 + 32) * 32);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::parse(TEMPORAL).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        let json = serde_json::json!({ "config": c, "report": {} }).to_string();
        assert_eq!(ExperimentConfig::parse(&json).unwrap(), c);
    }

    #[test]
    fn divisibility() {
        let c = ExperimentConfig::parse(&TEMPORAL.replace("[16, 32]", "[24]").replace("512", "2048")).unwrap();
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("2048 mod 24"), "{e}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::parse(&format!("{TEMPORAL}\nbogus = 1\n")).is_err());
        let e = ExperimentConfig::parse("schema_version = 1\nstudy = \"nope\"\nseed = 1\n").unwrap_err();
        assert!(e.to_string().contains("line"), "{e}");
    }

    #[test]
    fn subdominance_is_enforced() {
        let text = r#"
schema_version = 1
study = "spatial_strong"
seed = 1
paths = 4
[model]
M = 2048
[levels]
list = [4, 8]
reference = 32
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("allow_temporal_dominance"));
        let c = ExperimentConfig::parse(&format!("allow_temporal_dominance = true\n{text}")).unwrap();
        let v = c.validate().unwrap();
        assert_eq!(v.warnings.len(), 1);
        assert_eq!(v.cost, 4 * 2048 * (32 + 4 + 8));
    }
}
