//! Maximal safe recurrent sets for finite controlled Markov chains.
//!
//! Given a controlled chain `Q(x+ | x, u)` and a forbidden set `F`, the
//! crate computes the largest set of states that some memoryless policy
//! makes recurrent while never stepping into `F`, together with a policy
//! achieving it. The set is read off the support of a maximum-entropy
//! invariant pmf ([`maxent`]); [`oracle`] recomputes it exactly by
//! enumeration and by end-component decomposition.

#![allow(clippy::needless_range_loop)]

pub mod chain;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod maxent;
pub mod oracle;
pub mod random;
pub mod synthesis;

pub use chain::{
    closed_loop, recurrent_states, safe_recurrent_states, simulate, ClosedLoopChain,
    ControlledChain, JointDistribution, Policy, RecurrentClasses, StateSet, StateSetDisplay,
    ValidationReport, Violation,
};
pub use error::{ChainError, OracleError, SolveError, SynthesisError};
pub use maxent::{
    entropy, marginal_entropy, solve, solve_maxent, solve_maxent_marginal,
    solve_with_linear_constraints, LinearConstraint, MaxEntProblem, Objective, SolveReport,
    SolveStatus, SolverOptions,
};
pub use oracle::{
    brute_force_safe_recurrent, feasible_point_from_policy, mec_decomposition, SafeRecurrentResult,
    SupportSelection,
};
pub use synthesis::{
    extract_policy, perturb_within_support, verify, Certificate, OffSupportRule, Reweighting,
    SynthesizedPolicy,
};
