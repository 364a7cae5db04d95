use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NmgError>;

#[derive(Debug, Error)]
pub enum NmgError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("non-finite plant state at t = {t} s: {field}")]
    NonFinite { t: f64, field: &'static str },

    #[error("shed fraction {0} outside [0, 1]")]
    ShedOutOfRange(f64),

    #[error("need at least {need} frames, got {got}")]
    TooFewFrames { need: usize, got: usize },

    #[error("fundamental magnitude {0:e} too small, THD undefined")]
    NoFundamental(f64),

    #[error("policy update rejected in rule-based mode")]
    UpdateInRuleMode,

    #[error("gate inputs from different decision cycles: drive t = {drive_t}, decision t = {decision_t}")]
    CycleMismatch { drive_t: f64, decision_t: f64 },

    #[error("comparison needs at least two controllers, got {0}")]
    TooFewControllers(usize),

    #[error("mismatched suites: {0}")]
    MismatchedSuites(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("empty delta_t range [{lo}, {hi}]")]
    EmptyRange { lo: f64, hi: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NmgError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NmgError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            NmgError::InvalidParams(_) => "invalid_params",
            NmgError::NonFinite { .. } => "non_finite",
            NmgError::ShedOutOfRange(_) => "shed_out_of_range",
            NmgError::TooFewFrames { .. } => "too_few_frames",
            NmgError::NoFundamental(_) => "no_fundamental",
            NmgError::UpdateInRuleMode => "update_in_rule_mode",
            NmgError::CycleMismatch { .. } => "cycle_mismatch",
            NmgError::TooFewControllers(_) => "too_few_controllers",
            NmgError::MismatchedSuites(_) => "mismatched_suites",
            NmgError::EmptyTrace => "empty_trace",
            NmgError::EmptyRange { .. } => "empty_range",
            NmgError::Parse(_) => "parse",
            NmgError::Io { .. } => "io",
        }
    }
}
