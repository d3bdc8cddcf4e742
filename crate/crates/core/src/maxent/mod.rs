//! Maximum-entropy invariant pmfs over safe state-action pairs.
//!
//! The decision variable is a joint pmf `f(x, u)` subject to
//!
//! ```text
//! Σ_u f(x+, u)  = Σ_{x,u} Q(x+ | x, u) f(x, u)     for every x+   (invariance)
//! Σ_u f(x, u)   = 0                                  for x in F      (safety)
//! Σ_{x,u} h(u) f(x, u) <= β                          optional extras
//! ```
//!
//! and the objective is either the joint entropy `H(f)` or the entropy of the
//! state marginal `H(f_X)`. Either maximizer has the largest state support
//! among feasible points, which is the maximal safe recurrent set.
//!
//! Solving happens in two stages. Pairs that are zero at every feasible point
//! for structural reasons are pruned first. The rest is handed to a dual
//! Newton method whose primal iterates stay strictly positive; coordinates
//! headed for the boundary decay geometrically and are cut at a relative
//! threshold. The candidate support is then checked exactly with
//! [`crate::synthesis::verify`]; offending pairs are removed and the program
//! re-solved until the check passes.

mod dual;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{ControlledChain, JointDistribution, StateSet, DEFAULT_SUPPORT_TOL};
use crate::error::SolveError;
use crate::oracle::mec_decomposition;
use crate::synthesis::{extract_policy, verify, OffSupportRule, SupportViolation};
use dual::{minimize, DualOutcome, DualProblem, NewtonSettings};

pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
const MAX_PROXIMAL_STEPS: usize = 500;
const MARGINAL_GAP_TOL: f64 = 1e-10;

/// `Σ_{x,u} h(u) f(x, u) <= beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub h: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    Joint,
    Marginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntProblem {
    pub chain: ControlledChain,
    pub extra_constraints: Vec<LinearConstraint>,
    pub objective: Objective,
}

impl MaxEntProblem {
    pub fn joint(chain: ControlledChain) -> Self {
        MaxEntProblem {
            chain,
            extra_constraints: Vec::new(),
            objective: Objective::Joint,
        }
    }

    pub fn marginal(chain: ControlledChain) -> Self {
        MaxEntProblem {
            objective: Objective::Marginal,
            ..Self::joint(chain)
        }
    }

    pub fn with_constraint(mut self, h: Vec<f64>, beta: f64) -> Self {
        self.extra_constraints.push(LinearConstraint { h, beta });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Cap on Newton iterations summed over all stages.
    pub max_iterations: usize,
    /// Relative support threshold.
    pub support_tol: f64,
    /// Target dual gradient norm, i.e. constraint residual.
    pub gradient_tol: f64,
    /// Randomize the initial multipliers; `None` starts from zero.
    pub seed: Option<u64>,
    /// Compare the support against the end-component decomposition.
    pub verify_maximality: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            support_tol: DEFAULT_SUPPORT_TOL,
            gradient_tol: 1e-13,
            seed: None,
            verify_maximality: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    /// `max_x |f_X(x) - Σ Q(x | x', u) f(x', u)|`.
    pub invariance: f64,
    pub forbidden_mass: f64,
    pub normalization: f64,
    /// `max_k (Σ h_k(u) f(x, u) - beta_k)^+`, zero without extras.
    pub extra: f64,
}

/// Optimality evidence on the final support, where the optimum is interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityCertificate {
    /// Dual value minus primal objective.
    pub duality_gap: f64,
    /// Projected dual gradient norm.
    pub stationarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: Objective,
    pub f: Option<JointDistribution>,
    /// Joint entropy `H(f)` in nats.
    pub entropy: f64,
    /// Value of the objective that was maximized, in nats.
    pub objective_value: f64,
    pub residuals: Residuals,
    /// `S_{f_X}`, empty when infeasible.
    pub support: StateSet,
    /// Recurrent classes certified by the exact check.
    pub classes: Vec<StateSet>,
    /// Pairs removed because the exact check rejected them.
    pub repair_log: Vec<(usize, usize)>,
    pub iterations: usize,
    pub certificate: Option<OptimalityCertificate>,
    /// Agreement with the end-component decomposition, when requested and
    /// meaningful (no extra constraints).
    pub maximality: Option<bool>,
}

/// `-Σ f ln f` in nats with `0 ln 0 = 0`.
pub fn entropy(f: &JointDistribution) -> f64 {
    shannon(f.as_slice())
}

/// Entropy of the state marginal.
pub fn marginal_entropy(f: &JointDistribution) -> f64 {
    shannon(&f.marginal())
}

fn shannon(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

pub fn solve_maxent(
    chain: &ControlledChain,
    options: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    solve(&MaxEntProblem::joint(chain.clone()), options)
}

pub fn solve_maxent_marginal(
    chain: &ControlledChain,
    options: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    solve(&MaxEntProblem::marginal(chain.clone()), options)
}

pub fn solve_with_linear_constraints(
    chain: &ControlledChain,
    constraints: &[LinearConstraint],
    options: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    let problem = MaxEntProblem {
        chain: chain.clone(),
        extra_constraints: constraints.to_vec(),
        objective: Objective::Joint,
    };
    solve(&problem, options)
}

type Pair = (usize, usize);

/// Pairs that can carry mass: starting from `candidates`, drop states in F,
/// then repeatedly drop pairs whose row reaches a dropped state and states
/// left without pairs. Every dropped pair is zero at every feasible point
/// supported on `candidates`.
fn prune(chain: &ControlledChain, candidates: &BTreeSet<Pair>) -> BTreeSet<Pair> {
    let n = chain.n();
    let mut pairs: BTreeSet<Pair> = candidates
        .iter()
        .copied()
        .filter(|(x, _)| !chain.is_forbidden(*x))
        .collect();
    loop {
        let mut dead = vec![true; n];
        for &(x, _) in &pairs {
            dead[x] = false;
        }
        let before = pairs.len();
        pairs.retain(|&(x, u)| {
            chain
                .row(x, u)
                .iter()
                .enumerate()
                .all(|(y, &p)| p == 0.0 || !dead[y])
        });
        if pairs.len() == before {
            return pairs;
        }
    }
}

/// Outcome of the numeric stage on a fixed coordinate set.
enum Stage {
    Infeasible,
    Solved {
        coords: Vec<Pair>,
        f: Vec<f64>,
        certificate: OptimalityCertificate,
    },
}

struct Numeric<'a> {
    chain: &'a ControlledChain,
    extras: &'a [LinearConstraint],
    options: &'a SolverOptions,
    iterations: usize,
}

impl Numeric<'_> {
    fn settings(&self, infeasible_below: f64) -> Result<NewtonSettings, SolveError> {
        if self.iterations >= self.options.max_iterations {
            return Err(SolveError::NonConvergence {
                iterations: self.iterations,
                gradient: f64::NAN,
            });
        }
        Ok(NewtonSettings {
            grad_tol: self.options.gradient_tol,
            stall_tol: 1e-9,
            max_iter: self.options.max_iterations - self.iterations,
            infeasible_below,
        })
    }

    /// Constraint matrix rows: invariance per active state, then extras.
    fn build(&self, coords: &[Pair], log_g: Vec<f64>, eta: f64, proximal: bool) -> DualProblem {
        let n_coords = coords.len();
        let states: Vec<usize> = {
            let mut s: Vec<usize> = coords.iter().map(|p| p.0).collect();
            s.dedup();
            s
        };
        let mut groups = Vec::new();
        let mut start = 0;
        for j in 1..=n_coords {
            if j == n_coords || coords[j].0 != coords[start].0 {
                groups.push(start..j);
                start = j;
            }
        }
        let rows = states.len() + self.extras.len();
        let mut b = vec![0.0; rows * n_coords];
        for (r, &s) in states.iter().enumerate() {
            let row = &mut b[r * n_coords..(r + 1) * n_coords];
            for (j, &(x, u)) in coords.iter().enumerate() {
                row[j] = if x == s { 1.0 } else { 0.0 } - self.chain.prob(x, u, s);
            }
        }
        for (k, c) in self.extras.iter().enumerate() {
            let r = states.len() + k;
            let row = &mut b[r * n_coords..(r + 1) * n_coords];
            for (j, &(_, u)) in coords.iter().enumerate() {
                row[j] = -(c.h[u] - c.beta);
            }
        }
        let (beta, alpha) = if proximal {
            (1.0 / (1.0 + eta), 1.0 + 1.0 / eta)
        } else {
            (1.0, 1.0)
        };
        DualProblem {
            n_coords,
            groups,
            b,
            rows,
            n_eq: states.len(),
            log_g,
            eta,
            beta,
            alpha,
        }
    }

    fn initial_point(&self, rows: usize, n_eq: usize) -> Vec<f64> {
        match self.options.seed {
            None => vec![0.0; rows],
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..rows)
                    .map(|r| {
                        let v: f64 = rng.random_range(-0.01..0.01);
                        if r < n_eq {
                            v
                        } else {
                            v.abs()
                        }
                    })
                    .collect()
            }
        }
    }

    fn joint(&mut self, coords: Vec<Pair>) -> Result<Stage, SolveError> {
        let problem = self.build(&coords, vec![0.0; coords.len()], 1.0, false);
        // any feasible point has entropy >= 0, which bounds the dual below
        let settings = self.settings(-0.5)?;
        let y0 = self.initial_point(problem.rows, problem.n_eq);
        let result = minimize(&problem, y0, &settings).map_err(|e| self.account(e))?;
        self.iterations += result.iterations;
        if result.outcome == DualOutcome::Infeasible {
            return Ok(Stage::Infeasible);
        }
        let h = shannon(&result.eval.f);
        Ok(Stage::Solved {
            coords,
            certificate: OptimalityCertificate {
                duality_gap: result.eval.value - h,
                stationarity: result.grad_norm,
            },
            f: result.eval.f,
        })
    }

    /// KL-proximal point iterations on the marginal entropy. Each step
    /// maximizes `H(f_X) - KL(f || f_k) / eta` by the dual Newton method.
    /// Stops once the marginal duality gap certifies the objective.
    fn marginal(&mut self, coords: Vec<Pair>) -> Result<Stage, SolveError> {
        let n_coords = coords.len();
        let plain = self.build(&coords, vec![0.0; n_coords], 1.0, false);
        let mut log_g = vec![-(n_coords as f64).ln(); n_coords];
        let mut eta = 1.0;
        let mut prev: Option<Vec<f64>> = None;
        let mut best = None;
        for step in 0..MAX_PROXIMAL_STEPS {
            let problem = self.build(&coords, log_g.clone(), eta, true);
            // with g uniform, KL(f || g) <= ln N bounds the first dual below
            let bound = if step == 0 {
                -(n_coords as f64).ln() / eta - 0.5
            } else {
                f64::NEG_INFINITY
            };
            let settings = self.settings(bound)?;
            let y0 = self.initial_point(problem.rows, problem.n_eq);
            let result = minimize(&problem, y0, &settings).map_err(|e| self.account(e))?;
            self.iterations += result.iterations;
            if result.outcome == DualOutcome::Infeasible {
                return Ok(Stage::Infeasible);
            }
            let f = result.eval.f;
            let gap = marginal_gap(&plain, &result.y, &f);
            let moved = prev.as_ref().map_or(f64::INFINITY, |p| {
                p.iter().zip(&f).map(|(a, b)| (a - b).abs()).sum()
            });
            log_g = f.iter().map(|v| v.ln()).collect();
            prev = Some(f.clone());
            best = Some((f, gap, result.grad_norm));
            if gap <= MARGINAL_GAP_TOL || moved <= 1e-12 {
                break;
            }
            eta = (eta * 4.0).min(1e4);
        }
        let (f, duality_gap, stationarity) = best.expect("at least one proximal step");
        Ok(Stage::Solved {
            coords,
            certificate: OptimalityCertificate {
                duality_gap,
                stationarity,
            },
            f,
        })
    }

    fn account(&self, e: SolveError) -> SolveError {
        match e {
            SolveError::NonConvergence {
                iterations,
                gradient,
            } => SolveError::NonConvergence {
                iterations: self.iterations + iterations,
                gradient,
            },
            other => other,
        }
    }
}

/// `log Σ_x exp(max_u c(x, u)) - H(f_X)` where `c = Bᵀy`. The first term is
/// the marginal-entropy dual at `y`, an upper bound on `H(f_X)` over the
/// feasible set.
fn marginal_gap(plain: &DualProblem, y: &[f64], f: &[f64]) -> f64 {
    let c = plain.multipliers(y);
    let maxes: Vec<f64> = plain
        .groups
        .iter()
        .map(|g| {
            c[g.clone()]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let top = maxes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dual_value = top + maxes.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    let marginal: Vec<f64> = plain
        .groups
        .iter()
        .map(|g| f[g.clone()].iter().sum())
        .collect();
    dual_value - shannon(&marginal)
}

/// Solves either objective, with or without extra linear constraints.
pub fn solve(problem: &MaxEntProblem, options: &SolverOptions) -> Result<SolveReport, SolveError> {
    let chain = &problem.chain;
    let (n, m) = (chain.n(), chain.m());
    for (index, c) in problem.extra_constraints.iter().enumerate() {
        if c.h.len() != m {
            return Err(SolveError::ConstraintShape {
                index,
                got: c.h.len(),
                expected: m,
            });
        }
    }
    let mut numeric = Numeric {
        chain,
        extras: &problem.extra_constraints,
        options,
        iterations: 0,
    };
    let all: BTreeSet<Pair> = (0..n).flat_map(|x| (0..m).map(move |u| (x, u))).collect();
    let mut coords = prune(chain, &all);
    let mut repair_log = Vec::new();

    loop {
        if coords.is_empty() {
            return Ok(infeasible_report(
                problem.objective,
                repair_log,
                numeric.iterations,
            ));
        }
        let list: Vec<Pair> = coords.iter().copied().collect();
        let stage = match problem.objective {
            Objective::Joint => numeric.joint(list)?,
            Objective::Marginal => numeric.marginal(list)?,
        };
        let (list, f, certificate) = match stage {
            Stage::Infeasible => {
                return Ok(infeasible_report(
                    problem.objective,
                    repair_log,
                    numeric.iterations,
                ))
            }
            Stage::Solved {
                coords,
                f,
                certificate,
            } => (coords, f, certificate),
        };

        let cut = options.support_tol * f.iter().cloned().fold(0.0, f64::max);
        let kept: BTreeSet<Pair> = list
            .iter()
            .zip(&f)
            .filter(|(_, &v)| v > cut)
            .map(|(p, _)| *p)
            .collect();
        if kept.len() < list.len() {
            coords = prune(chain, &kept);
            continue;
        }

        let mut mass = vec![0.0; n * m];
        for (&(x, u), &v) in list.iter().zip(&f) {
            mass[x * m + u] = v;
        }
        let total: f64 = mass.iter().sum();
        mass.iter_mut().for_each(|v| *v /= total);
        let joint = JointDistribution::new(n, m, mass)
            .expect("solver output is a pmf")
            .with_support_tol(options.support_tol);
        let synthesized =
            extract_policy(&joint, chain, OffSupportRule::Uniform).expect("support is nonempty");
        let support = joint.support_states();

        match verify(chain, &synthesized.policy, &support) {
            Ok(cert) => {
                let residuals = residuals(chain, &problem.extra_constraints, &joint);
                let maximality = (options.verify_maximality
                    && problem.extra_constraints.is_empty())
                .then(|| mec_decomposition(chain).states == support);
                let h = entropy(&joint);
                let objective_value = match problem.objective {
                    Objective::Joint => h,
                    Objective::Marginal => marginal_entropy(&joint),
                };
                return Ok(SolveReport {
                    status: SolveStatus::Optimal,
                    objective: problem.objective,
                    f: Some(joint),
                    entropy: h,
                    objective_value,
                    residuals,
                    support,
                    classes: cert.classes,
                    repair_log,
                    iterations: numeric.iterations,
                    certificate: Some(certificate),
                    maximality,
                });
            }
            Err(violations) => {
                let bad = offending_pairs(chain, &coords, &support, &violations);
                repair_log.extend(bad.iter().copied());
                let rest: BTreeSet<Pair> = coords.difference(&bad).copied().collect();
                coords = prune(chain, &rest);
            }
        }
    }
}

/// Pairs to drop after a failed exact check: everything at a violating state,
/// plus pairs whose rows leave the claimed support.
fn offending_pairs(
    chain: &ControlledChain,
    coords: &BTreeSet<Pair>,
    support: &StateSet,
    violations: &[SupportViolation],
) -> BTreeSet<Pair> {
    let bad_states: StateSet = violations.iter().map(SupportViolation::state).collect();
    let mut bad: BTreeSet<Pair> = coords
        .iter()
        .copied()
        .filter(|(x, u)| {
            bad_states.contains(x)
                || chain
                    .row(*x, *u)
                    .iter()
                    .enumerate()
                    .any(|(y, &p)| p > 0.0 && !support.contains(&y))
        })
        .collect();
    if bad.is_empty() {
        // cannot happen for a consistent verifier; drop the first violating state's pairs
        // so the loop still shrinks
        if let Some(&x) = bad_states.iter().next() {
            bad = coords.iter().copied().filter(|p| p.0 == x).collect();
        }
        if bad.is_empty() {
            bad = coords.iter().take(1).copied().collect();
        }
    }
    bad
}

fn infeasible_report(
    objective: Objective,
    repair_log: Vec<Pair>,
    iterations: usize,
) -> SolveReport {
    SolveReport {
        status: SolveStatus::Infeasible,
        objective,
        f: None,
        entropy: 0.0,
        objective_value: 0.0,
        residuals: Residuals::default(),
        support: StateSet::new(),
        classes: Vec::new(),
        repair_log,
        iterations,
        certificate: None,
        maximality: None,
    }
}

/// Constraint residuals of a joint pmf, recomputed from scratch.
pub fn residuals(
    chain: &ControlledChain,
    extras: &[LinearConstraint],
    f: &JointDistribution,
) -> Residuals {
    let (n, m) = (chain.n(), chain.m());
    let marginal = f.marginal();
    let mut inflow = vec![0.0; n];
    for x in 0..n {
        for u in 0..m {
            let v = f.mass(x, u);
            if v == 0.0 {
                continue;
            }
            for (acc, q) in inflow.iter_mut().zip(chain.row(x, u)) {
                *acc += q * v;
            }
        }
    }
    let invariance = marginal
        .iter()
        .zip(&inflow)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let forbidden_mass = chain.forbidden().iter().map(|&x| marginal[x]).sum();
    let normalization = (f.as_slice().iter().sum::<f64>() - 1.0).abs();
    let extra = extras
        .iter()
        .map(|c| {
            let lhs: f64 = (0..n)
                .flat_map(|x| (0..m).map(move |u| (x, u)))
                .map(|(x, u)| c.h[u] * f.mass(x, u))
                .sum();
            (lhs - c.beta).max(0.0)
        })
        .fold(0.0, f64::max);
    Residuals {
        invariance,
        forbidden_mass,
        normalization,
        extra,
    }
}
