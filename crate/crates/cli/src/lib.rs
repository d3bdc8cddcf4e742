//! Command-line front end: chain files in, reports and DOT graphs out.

pub mod chain_file;
pub mod dot;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use saferecur::oracle::{
    brute_force_safe_recurrent_with, BruteForceOptions, DEFAULT_ENUMERATION_CAP,
};
use saferecur::{
    closed_loop, extract_policy, mec_decomposition, solve, MaxEntProblem, Objective,
    OffSupportRule, OracleError, SolveError, SolverOptions,
};

use chain_file::ChainFile;
use report::SolveView;

pub const ENUM_CAP_VAR: &str = "SAFERECUR_MAX_ENUM";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    NonConvergence(SolveError),
    #[error("solver support {solver} disagrees with the end-component set {exact}")]
    VerifyDisagreement { solver: String, exact: String },
    #[error(transparent)]
    EnumerationCap(OracleError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::VerifyDisagreement { .. } => 4,
            CliError::EnumerationCap(_) => 5,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "saferecur",
    version,
    about = "Maximal safe recurrent sets of controlled Markov chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Drop unknown fields of the chain file with a warning instead of failing.
    #[arg(long, global = true)]
    pub allow_unknown_fields: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Joint,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Brute,
    Mec,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maximum-entropy solve; prints the safe recurrent set, policy and pmf.
    Solve {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "joint")]
        objective: ObjectiveArg,
        /// Cross-check the support against the end-component decomposition.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        json: bool,
        /// Relative support threshold.
        #[arg(long, default_value_t = saferecur::chain::DEFAULT_SUPPORT_TOL)]
        tol: f64,
        /// Randomize the solver's starting point.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Exact safe recurrent set by enumeration or end components.
    Oracle {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "mec")]
        method: Method,
    },
    /// Graphviz description of the chain.
    ExportDot {
        file: PathBuf,
        /// Draw the closed loop of the synthesized policy instead.
        #[arg(long)]
        policy_from_solve: bool,
    },
}

/// What a successful command produced.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Output {
    pub stdout: String,
    pub warnings: Vec<String>,
}

fn load(path: &Path, allow_unknown: bool) -> Result<(ChainFile, Vec<String>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let parsed = chain_file::parse(&text, allow_unknown)?;
    Ok((parsed.file, parsed.warnings))
}

fn enumeration_cap() -> Result<u64, CliError> {
    match std::env::var(ENUM_CAP_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Input(format!(
                "{ENUM_CAP_VAR} must be a nonnegative integer, got `{v}`"
            ))
        }),
        Err(_) => Ok(DEFAULT_ENUMERATION_CAP),
    }
}

fn solve_file(
    file: &ChainFile,
    objective: Objective,
    options: &SolverOptions,
) -> Result<(saferecur::ControlledChain, saferecur::SolveReport), CliError> {
    let chain = file.to_chain()?;
    let problem = MaxEntProblem {
        chain: chain.clone(),
        extra_constraints: file.constraints(),
        objective,
    };
    let report = solve(&problem, options).map_err(|e| match e {
        SolveError::NonConvergence { .. } => CliError::NonConvergence(e),
        other => CliError::Input(other.to_string()),
    })?;
    Ok((chain, report))
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Solve {
            file,
            objective,
            verify,
            json,
            tol,
            seed,
        } => {
            if !(*tol > 0.0 && *tol < 1.0) {
                return Err(CliError::Input(format!(
                    "--tol must lie in (0, 1), got {tol}"
                )));
            }
            let (file, warnings) = load(file, cli.allow_unknown_fields)?;
            let objective = match objective {
                ObjectiveArg::Joint => Objective::Joint,
                ObjectiveArg::Marginal => Objective::Marginal,
            };
            let options = SolverOptions {
                support_tol: *tol,
                seed: *seed,
                ..SolverOptions::default()
            };
            let (chain, report) = solve_file(&file, objective, &options)?;
            let policy = report
                .f
                .as_ref()
                .map(|f| extract_policy(f, &chain, OffSupportRule::Uniform).map(|s| s.policy))
                .transpose()
                .map_err(|e| CliError::Input(e.to_string()))?;
            let mut mec_agrees = None;
            if *verify {
                let exact = mec_decomposition(&chain).states;
                // extra constraints may legitimately shrink the support
                let agrees = if file.constraints.is_empty() {
                    exact == report.support
                } else {
                    report.support.is_subset(&exact)
                };
                if !agrees {
                    return Err(CliError::VerifyDisagreement {
                        solver: saferecur::StateSetDisplay(&report.support).to_string(),
                        exact: saferecur::StateSetDisplay(&exact).to_string(),
                    });
                }
                mec_agrees = Some(true);
            }
            let view = SolveView {
                file: &file,
                report: &report,
                policy: policy.as_ref(),
                mec_agrees,
            };
            let stdout = if *json { view.json() } else { view.human() };
            Ok(Output { stdout, warnings })
        }
        Command::Oracle { file, method } => {
            let (file, warnings) = load(file, cli.allow_unknown_fields)?;
            let chain = file.to_chain()?;
            let stdout = match method {
                Method::Brute => {
                    let options = BruteForceOptions {
                        cap: enumeration_cap()?,
                        workers: 0,
                    };
                    let set = brute_force_safe_recurrent_with(&chain, options)
                        .map_err(CliError::EnumerationCap)?;
                    report::oracle_human(&file, "brute", &set, None)
                }
                Method::Mec => {
                    let r = mec_decomposition(&chain);
                    report::oracle_human(&file, "mec", &r.states, Some(&r))
                }
            };
            Ok(Output { stdout, warnings })
        }
        Command::ExportDot {
            file,
            policy_from_solve,
        } => {
            let (file, warnings) = load(file, cli.allow_unknown_fields)?;
            let stdout = if *policy_from_solve {
                let (chain, report) =
                    solve_file(&file, Objective::Joint, &SolverOptions::default())?;
                let closed = match &report.f {
                    Some(f) => {
                        let k = extract_policy(f, &chain, OffSupportRule::Uniform)
                            .map_err(|e| CliError::Input(e.to_string()))?;
                        Some(
                            closed_loop(&chain, &k.policy)
                                .map_err(|e| CliError::Input(e.to_string()))?,
                        )
                    }
                    None => None,
                };
                dot::closed_loop_edges(&file, &chain, closed.as_ref(), &report.support)
            } else {
                dot::open_loop(&file, &file.to_chain()?)
            };
            Ok(Output { stdout, warnings })
        }
    }
}
