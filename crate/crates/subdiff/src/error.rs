use std::path::Path;

use subdiff_core::coefficients::CoefficientError;
use subdiff_core::convergence::ConvergenceError;
use subdiff_core::diagnostics::DiagnosticsError;
use subdiff_core::noise::NoiseError;
use subdiff_core::schemes::SchemeError;
use subdiff_core::time_change::TimeChangeError;

/// CLI failures, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config files, unreadable or unwritable paths.
    #[error("{0}")]
    Usage(String),
    /// A model assumption required by the requested scheme does not hold.
    #[error("assumption violated: {0}")]
    Assumption(String),
    /// Overflow, rejection-cap exhaustion, failed fits and similar.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Assumption(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {err}", path.display()))
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::RejectionLimit { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CoefficientError> for CliError {
    fn from(e: CoefficientError) -> Self {
        match e {
            CoefficientError::AssumptionViolation(_) | CoefficientError::MissingPartial(_) => {
                CliError::Assumption(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::Coefficient(c) => c.into(),
            SchemeError::AssumptionViolation(_) => CliError::Assumption(e.to_string()),
            SchemeError::TimeChange(t) => t.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<TimeChangeError> for CliError {
    fn from(e: TimeChangeError) -> Self {
        match e {
            TimeChangeError::InvalidStep(_)
            | TimeChangeError::InvalidHorizon(_)
            | TimeChangeError::InvalidFactor
            | TimeChangeError::OutOfDomain { .. } => CliError::Usage(e.to_string()),
            TimeChangeError::Noise(n) => n.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ConvergenceError> for CliError {
    fn from(e: ConvergenceError) -> Self {
        match e {
            ConvergenceError::Scheme(s) => s.into(),
            ConvergenceError::TimeChange(t) => t.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Noise(n) => n.into(),
            DiagnosticsError::StepCapExceeded { .. } | DiagnosticsError::AllExcluded => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}
