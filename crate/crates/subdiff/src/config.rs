//! Versioned JSON experiment configs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use subdiff_core::coefficients::{builtin, TaylorOrder};
use subdiff_core::convergence::{ErrorMode, ExperimentConfig, TerminalRule};
use subdiff_core::schemes::{MilsteinCompensator, SchemeConfig};
use subdiff_core::SubordinatorSpec;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubordinatorFile {
    Stable { beta: f64 },
    TemperedStable { beta: f64, kappa: f64 },
    Gamma,
}

impl SubordinatorFile {
    pub fn to_spec(&self) -> Result<SubordinatorSpec, CliError> {
        let spec = match *self {
            SubordinatorFile::Stable { beta } => SubordinatorSpec::stable(beta),
            SubordinatorFile::TemperedStable { beta, kappa } => SubordinatorSpec::tempered_stable(beta, kappa),
            SubordinatorFile::Gamma => Ok(SubordinatorSpec::gamma()),
        };
        spec.map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensatorFile {
    #[default]
    InnerClockDelta,
    OuterClockTau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeFile {
    Em,
    Milstein {
        #[serde(default)]
        compensator: CompensatorFile,
    },
    ItoTaylor { gamma: f64 },
}

impl SchemeFile {
    pub fn to_config(&self) -> Result<SchemeConfig, CliError> {
        Ok(match *self {
            SchemeFile::Em => SchemeConfig::euler_maruyama(),
            SchemeFile::Milstein { compensator } => SchemeConfig::milstein(match compensator {
                CompensatorFile::InnerClockDelta => MilsteinCompensator::InnerClockDelta,
                CompensatorFile::OuterClockTau => MilsteinCompensator::OuterClockTau,
            }),
            SchemeFile::ItoTaylor { gamma } => {
                TaylorOrder::from_f64(gamma).map_err(|e| CliError::Usage(e.to_string()))?;
                SchemeConfig::ito_taylor(gamma).map_err(|e| CliError::Usage(e.to_string()))?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModeFile {
    #[default]
    VsReference,
    VsClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalFile {
    #[default]
    Step,
    Interpolated,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_x0() -> f64 {
    1.0
}

fn default_delta_ref() -> f64 {
    2f64.powi(-13)
}

fn default_deltas() -> Vec<f64> {
    (7..=12).map(|k| 2f64.powi(-k)).collect()
}

fn default_paths() -> usize {
    100
}

/// On-disk form of an experiment. Only `schema`, `sde`, `subordinator`
/// and `scheme` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema: u32,
    /// Name of a built-in coefficient set.
    pub sde: String,
    pub subordinator: SubordinatorFile,
    pub scheme: SchemeFile,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_delta_ref")]
    pub delta_ref: f64,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub error_mode: ErrorModeFile,
    #[serde(default)]
    pub terminal: TerminalFile,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ExperimentFile = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if file.schema != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema {} is not supported (expected {SCHEMA_VERSION})",
                file.schema
            )));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Builds the core config. `seed` has already been resolved by the caller.
    pub fn to_config(&self, seed: u64) -> Result<ExperimentConfig, CliError> {
        let sde = builtin(&self.sde).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(ExperimentConfig {
            sde,
            subordinator: self.subordinator.to_spec()?,
            scheme: self.scheme.to_config()?,
            horizon: self.horizon,
            x0: self.x0,
            delta_ref: self.delta_ref,
            deltas: self.deltas.clone(),
            n_paths: self.n_paths,
            seed,
            error_mode: match self.error_mode {
                ErrorModeFile::VsReference => ErrorMode::VsReference,
                ErrorModeFile::VsClosedForm => ErrorMode::VsClosedForm,
            },
            terminal: match self.terminal {
                TerminalFile::Step => TerminalRule::Step,
                TerminalFile::Interpolated => TerminalRule::Interpolated,
            },
        })
    }
}
