//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::Path;

use mgt_core::model::ModelConfig;
use mgt_core::training::{ExperimentConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self.model.problems();
        out.extend(self.train.problems());
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            out.push(format!("split.train_fraction {f} must lie in (0, 1)"));
        }
        out
    }

    pub fn validate(self) -> Result<Self, CliError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(CliError::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::parse(&text)
    }

    /// Parses a config file, reporting every unknown key and every ill-typed
    /// value rather than stopping at the first.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))?;
        let defaults = Table::try_from(RunConfig::default()).expect("defaults serialize");
        let mut problems = Vec::new();
        for (section, value) in &file {
            let Some(Value::Table(known)) = defaults.get(section) else {
                problems.push(format!("unknown section [{section}]"));
                continue;
            };
            let Value::Table(keys) = value else {
                problems.push(format!("{section} must be a table"));
                continue;
            };
            for (key, v) in keys {
                if !known.contains_key(key) {
                    problems.push(format!("unknown key {section}.{key}"));
                    continue;
                }
                let mut probe = defaults.clone();
                if let Some(Value::Table(t)) = probe.get_mut(section) {
                    t.insert(key.clone(), v.clone());
                }
                if let Err(e) = RunConfig::deserialize(probe) {
                    problems.push(format!("{section}.{key}: {}", e.message()));
                }
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        RunConfig::deserialize(file).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
