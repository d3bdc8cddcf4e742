use thiserror::Error;

use crate::chain::ValidationReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("invalid controlled chain: {0}")]
    Invalid(ValidationReport),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state {state} out of range (n = {n})")]
    StateOutOfRange { state: usize, n: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(
        "solver did not converge within {iterations} iterations (gradient norm {gradient:.3e})"
    )]
    NonConvergence { iterations: usize, gradient: f64 },
    #[error("linear constraint {index} has {got} weights, expected {expected}")]
    ConstraintShape {
        index: usize,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("joint distribution has empty support")]
    EmptySupport,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reweighting is not strictly positive at state {state}, action {action}")]
    WeightPattern { state: usize, action: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration needs {needed} support selections, cap is {cap}")]
    EnumerationCap { needed: f64, cap: u64 },
    #[error("class is not a closed recurrent class under the policy")]
    ClassNotClosed,
    #[error("class touches the forbidden set under the policy")]
    ClassNotSafe,
    #[error("class is empty")]
    EmptyClass,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}
