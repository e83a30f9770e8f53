use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("initial datum carries mass {datum} but the model declares {declared}")]
    MassMismatch { datum: f64, declared: f64 },

    #[error("initial datum is defined on [0, {datum}] but the model domain is [0, {declared}]")]
    DomainMismatch { datum: f64, declared: f64 },

    #[error("cumulative mass is flat on [{left}, {right}] at level {level}; datum vanishes on a set of positive measure")]
    Plateau { level: f64, left: f64, right: f64 },

    #[error("corrupt particle state: {0}")]
    CorruptState(String),

    #[error("non-finite {what} at particle {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("step size {step:e} fell below the minimum at t = {time}; smallest gap {min_gap:e} at cell {gap_index}")]
    StepUnderflow {
        time: f64,
        step: f64,
        min_gap: f64,
        gap_index: usize,
    },

    #[error("test function is not admissible: {0}")]
    InadmissibleTest(String),

    #[error("invalid integrator configuration: {0}")]
    IntegratorConfig(String),

    #[error("configuration errors:\n{}", format_issues(.0))]
    Config(Vec<crate::config::ConfigIssue>),

    #[error("malformed {file} at line {line}: {reason}")]
    Parse {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_issues(issues: &[crate::config::ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
