//! Run configuration: one JSON document describing the model, the domain,
//! the analysis and the output.

use std::path::{Path, PathBuf};

use exit_spectrum_core::{ChainSpec, McConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    #[serde(default)]
    pub omega: Omega,
    pub analysis: Analysis,
    #[serde(default)]
    pub output: Output,
}

/// Exactly one model block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Model {
    Chain(ChainSource),
    Diffusion(DiffusionModel),
    Fractional(FractionalModel),
    Timechanged(TimeChangedModel),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Chain(_) => "chain",
            Model::Diffusion(_) => "diffusion",
            Model::Fractional(_) => "fractional",
            Model::Timechanged(_) => "timechanged",
        }
    }
}

/// A chain given inline or as a path to a `{"mu": ..., "L": ...}` file;
/// relative paths resolve against the configuration's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSource {
    File { path: PathBuf },
    Inline(ChainSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionModel {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    /// Potential `V(x)`; the generator is `Δ + V'·∇`.
    #[serde(rename = "V", default = "zero")]
    pub v: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionalModel {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub alpha: f64,
}

/// `σ(x)^α Δ^{α/2}` on the half-line, truncated to `(0, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeChangedModel {
    #[serde(rename = "R")]
    pub r: f64,
    pub n: usize,
    pub alpha: f64,
    pub sigma: String,
}

fn zero() -> String {
    "0".into()
}

/// The domain: every state, or a list of chain states.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Omega {
    #[default]
    All,
    States(Vec<usize>),
}

impl Serialize for Omega {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Omega::All => s.serialize_str("all"),
            Omega::States(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Omega {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Tag(String),
            States(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Tag(t) if t == "all" => Ok(Omega::All),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "omega must be \"all\" or a list of states, got {t:?}"
            ))),
            Raw::States(v) => Ok(Omega::States(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    #[serde(rename = "K")]
    pub k: usize,
    /// Exponential-moment rates, absolute; each must lie in `(0, λ0)`.
    #[serde(default, rename = "beta")]
    pub betas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    /// Also report bounds for the probability-normalized measure.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    #[default]
    Text,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration and resolves a chain file path against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Model::Chain(ChainSource::File { path: p }) = &mut cfg.model {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.analysis.k == 0 {
            return bad("analysis.K must be at least 1");
        }
        if self.analysis.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("analysis.beta values must be positive");
        }
        match &self.model {
            Model::Diffusion(DiffusionModel { a, b, .. }) | Model::Fractional(FractionalModel { a, b, .. })
                if !(a.is_finite() && b.is_finite() && a < b) =>
            {
                bad("model interval must satisfy a < b")
            }
            Model::Timechanged(t) if !(t.r.is_finite() && t.r > 0.0) => bad("model.timechanged.R must be positive"),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_model_block() {
        let cfgs = [
            r#"{"model": {"chain": {"mu": [1], "L": [[-1]]}}, "analysis": {"K": 3}}"#,
            r#"{"model": {"chain": {"path": "c.json"}}, "omega": [0], "analysis": {"K": 3}}"#,
            r#"{"model": {"diffusion": {"a": 0, "b": 1, "n": 9, "V": "x"}}, "omega": "all", "analysis": {"K": 3}}"#,
            r#"{"model": {"fractional": {"a": -1, "b": 1, "n": 9, "alpha": 1}}, "analysis": {"K": 3}}"#,
            r#"{"model": {"timechanged": {"R": 5, "n": 9, "alpha": 1.5, "sigma": "1"}}, "analysis": {"K": 3, "beta": [0.1]}}"#,
        ];
        let names = ["chain", "chain", "diffusion", "fractional", "timechanged"];
        for (text, name) in cfgs.iter().zip(names) {
            let cfg = RunConfig::from_json(text).unwrap();
            assert_eq!(cfg.model.name(), name);
            let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(again, cfg);
        }
    }

    #[test]
    fn rejects_malformed_configs() {
        let bad = [
            r#"{"model": {}, "analysis": {"K": 3}}"#,
            r#"{"model": {"fractional": {"a": 0, "b": 1, "n": 9, "alpha": 1}, "diffusion": {"a": 0, "b": 1, "n": 9}}, "analysis": {"K": 3}}"#,
            r#"{"model": {"fractional": {"a": 0, "b": 1, "n": 9, "alpha": 1}}, "analysis": {"K": 0}}"#,
            r#"{"model": {"fractional": {"a": 1, "b": 0, "n": 9, "alpha": 1}}, "analysis": {"K": 2}}"#,
            r#"{"model": {"fractional": {"a": 0, "b": 1, "n": 9, "alpha": 1}}, "omega": "some", "analysis": {"K": 2}}"#,
            r#"{"model": {"fractional": {"a": 0, "b": 1, "n": 9, "alpha": 1}}, "analysis": {"K": 2, "beta": [-1]}}"#,
        ];
        for text in bad {
            assert!(matches!(RunConfig::from_json(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
