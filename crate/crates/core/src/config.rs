//! Experiment configuration files (TOML).
//!
//! One file describes a full experiment: the environment, the network
//! shape, training hyperparameters and evaluation settings. Unknown keys
//! are rejected so typos fail loudly instead of silently using defaults.

use crate::env::EnvConfig;
use crate::metrics::EvalConfig;
use crate::net::NetArch;
use crate::train::TrainConfig;
use crate::{fnv1a64, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_conv_filters() -> usize {
    128
}
fn default_conv_kernel() -> usize {
    8
}
fn default_hidden_units() -> usize {
    256
}
fn default_output_dir() -> String {
    "out".into()
}

/// Network shape as written in config files. Input widths are not listed
/// here; they follow from the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub hidden_units: usize,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            conv_filters: default_conv_filters(),
            conv_kernel: default_conv_kernel(),
            hidden_units: default_hidden_units(),
        }
    }
}

/// A full experiment: environment, network, training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub env: EnvConfig,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.net_arch().validate()?;
        Ok(())
    }

    /// Combines the arch section with the environment's input widths.
    pub fn net_arch(&self) -> NetArch {
        NetArch {
            n_sensors: self.env.n_sensors(),
            history_len: self.env.history_len,
            conv_filters: self.arch.conv_filters,
            conv_kernel: self.arch.conv_kernel,
            hidden_units: self.arch.hidden_units,
        }
    }

    /// Renders the configuration back to TOML. `parse_str` of the output
    /// reproduces the configuration exactly.
    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Fingerprint of the experiment settings, embedded in emitted
    /// artifacts so results can be traced back. The output directory is
    /// excluded: where artifacts land does not change what was run.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = String::new();
        let json = serde_json::to_string(&canonical).expect("config serializes to JSON");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

/// Parses and validates a configuration from TOML text.
pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Parses and validates a configuration file.
pub fn parse_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
