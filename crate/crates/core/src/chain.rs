//! Controlled chains, policies, closed loops and recurrence analysis.
//!
//! Matrices are stored row = current state, column = next state. States and
//! actions are 0-based internally; [`StateSetDisplay`] renders 1-based sets
//! for reports.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ChainError;
use crate::graph;

/// Tolerance for kernel and policy rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance for closed-loop rows and joint pmfs summing to one.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Closed-loop entries at or below this value are not edges.
pub const EDGE_CUTOFF: f64 = 1e-14;

pub type StateSet = BTreeSet<usize>;

/// A finite controlled Markov chain `Q(x+ | x, u)` with a forbidden set.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledChain {
    n: usize,
    m: usize,
    /// `kernel[(x * m + u) * n + y] = Q(y | x, u)`.
    kernel: Vec<f64>,
    forbidden: StateSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDimension {
        states: usize,
        actions: usize,
    },
    KernelLength {
        expected: usize,
        got: usize,
    },
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeEntry {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    NonFinite {
        state: usize,
        action: usize,
        next: usize,
    },
    ForbiddenOutOfRange {
        state: usize,
    },
}

impl fmt::Display for Violation {
    // 1-based indices throughout
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::EmptyDimension { states, actions } => {
                write!(
                    f,
                    "need at least one state and one action (got n = {states}, m = {actions})"
                )
            }
            Violation::KernelLength { expected, got } => {
                write!(f, "kernel has {got} entries, expected {expected}")
            }
            Violation::RowSum { state, action, sum } => write!(
                f,
                "row of state {} under action {} sums to {sum}",
                state + 1,
                action + 1
            ),
            Violation::NegativeEntry {
                state,
                action,
                next,
                value,
            } => write!(
                f,
                "negative probability {value} from state {} to {} under action {}",
                state + 1,
                next + 1,
                action + 1
            ),
            Violation::NonFinite {
                state,
                action,
                next,
            } => write!(
                f,
                "non-finite probability from state {} to {} under action {}",
                state + 1,
                next + 1,
                action + 1
            ),
            Violation::ForbiddenOutOfRange { state } => {
                write!(f, "forbidden state {} is out of range", state + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl ControlledChain {
    /// Builds a chain without checking it. Use [`ControlledChain::validate`]
    /// before handing it to anything else.
    pub fn from_raw(n: usize, m: usize, kernel: Vec<f64>, forbidden: StateSet) -> Self {
        ControlledChain {
            n,
            m,
            kernel,
            forbidden,
        }
    }

    pub fn new(
        n: usize,
        m: usize,
        kernel: Vec<f64>,
        forbidden: impl IntoIterator<Item = usize>,
    ) -> Result<Self, ChainError> {
        let chain = Self::from_raw(n, m, kernel, forbidden.into_iter().collect());
        let report = chain.validate();
        if report.is_ok() {
            Ok(chain)
        } else {
            Err(ChainError::Invalid(report))
        }
    }

    /// One row-stochastic `n x n` matrix per action.
    pub fn from_action_matrices(
        matrices: &[Vec<Vec<f64>>],
        forbidden: impl IntoIterator<Item = usize>,
    ) -> Result<Self, ChainError> {
        let m = matrices.len();
        let n = matrices.first().map_or(0, Vec::len);
        let mut kernel = vec![0.0; n * m * n];
        for (u, mat) in matrices.iter().enumerate() {
            if mat.len() != n {
                return Err(ChainError::DimensionMismatch(format!(
                    "action {} has {} rows, expected {n}",
                    u + 1,
                    mat.len()
                )));
            }
            for (x, row) in mat.iter().enumerate() {
                if row.len() != n {
                    return Err(ChainError::DimensionMismatch(format!(
                        "action {} row {} has {} entries, expected {n}",
                        u + 1,
                        x + 1,
                        row.len()
                    )));
                }
                let base = (x * m + u) * n;
                kernel[base..base + n].copy_from_slice(row);
            }
        }
        Self::new(n, m, kernel, forbidden)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            violations.push(Violation::EmptyDimension {
                states: n,
                actions: m,
            });
        }
        if self.kernel.len() != n * m * n {
            violations.push(Violation::KernelLength {
                expected: n * m * n,
                got: self.kernel.len(),
            });
        } else {
            for x in 0..n {
                for u in 0..m {
                    let row = self.row(x, u);
                    let mut finite = true;
                    for (y, &p) in row.iter().enumerate() {
                        if !p.is_finite() {
                            finite = false;
                            violations.push(Violation::NonFinite {
                                state: x,
                                action: u,
                                next: y,
                            });
                        } else if p < 0.0 {
                            violations.push(Violation::NegativeEntry {
                                state: x,
                                action: u,
                                next: y,
                                value: p,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if finite && (sum - 1.0).abs() > ROW_SUM_TOL {
                        violations.push(Violation::RowSum {
                            state: x,
                            action: u,
                            sum,
                        });
                    }
                }
            }
        }
        for &s in &self.forbidden {
            if s >= n {
                violations.push(Violation::ForbiddenOutOfRange { state: s });
            }
        }
        ValidationReport { violations }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `Q(· | x, u)`.
    pub fn row(&self, x: usize, u: usize) -> &[f64] {
        let base = (x * self.m + u) * self.n;
        &self.kernel[base..base + self.n]
    }

    pub fn prob(&self, x: usize, u: usize, next: usize) -> f64 {
        self.kernel[(x * self.m + u) * self.n + next]
    }

    pub fn forbidden(&self) -> &StateSet {
        &self.forbidden
    }

    pub fn is_forbidden(&self, x: usize) -> bool {
        self.forbidden.contains(&x)
    }

    pub fn with_forbidden(
        &self,
        forbidden: impl IntoIterator<Item = usize>,
    ) -> Result<Self, ChainError> {
        Self::new(self.n, self.m, self.kernel.clone(), forbidden)
    }

    /// Whether `Q(· | x, u)` puts positive mass on any state of `set`.
    pub fn row_touches(&self, x: usize, u: usize, set: &StateSet) -> bool {
        set.iter().any(|&y| self.prob(x, u, y) > 0.0)
    }

    /// The kernel slice of action `u` as an `n x n` matrix.
    pub fn action_matrix(&self, u: usize) -> Vec<Vec<f64>> {
        (0..self.n).map(|x| self.row(x, u).to_vec()).collect()
    }
}

/// Memoryless time-invariant policy `K(u | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n: usize,
    m: usize,
    /// `probs[x * m + u] = K(u | x)`.
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n: usize, m: usize, probs: Vec<f64>) -> Result<Self, ChainError> {
        if probs.len() != n * m {
            return Err(ChainError::DimensionMismatch(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n * m
            )));
        }
        for x in 0..n {
            let col = &probs[x * m..(x + 1) * m];
            if let Some(u) = col
                .iter()
                .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
            {
                return Err(ChainError::InvalidPolicy(format!(
                    "K({}, {}) = {} is not a probability",
                    u + 1,
                    x + 1,
                    col[u]
                )));
            }
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ChainError::InvalidPolicy(format!(
                    "action probabilities at state {} sum to {sum}",
                    x + 1
                )));
            }
        }
        Ok(Policy { n, m, probs })
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Policy {
            n,
            m,
            probs: vec![1.0 / m as f64; n * m],
        }
    }

    /// Chooses `actions[x]` with probability one at each state.
    pub fn deterministic(m: usize, actions: &[usize]) -> Result<Self, ChainError> {
        let n = actions.len();
        let mut probs = vec![0.0; n * m];
        for (x, &u) in actions.iter().enumerate() {
            if u >= m {
                return Err(ChainError::InvalidPolicy(format!(
                    "action {} at state {} out of range",
                    u + 1,
                    x + 1
                )));
            }
            probs[x * m + u] = 1.0;
        }
        Ok(Policy { n, m, probs })
    }

    /// Uniform over `allowed[x]` at each state. Empty sets are rejected.
    pub fn uniform_over(m: usize, allowed: &[Vec<usize>]) -> Result<Self, ChainError> {
        let n = allowed.len();
        let mut probs = vec![0.0; n * m];
        for (x, acts) in allowed.iter().enumerate() {
            if acts.is_empty() {
                return Err(ChainError::InvalidPolicy(format!(
                    "no action allowed at state {}",
                    x + 1
                )));
            }
            let w = 1.0 / acts.len() as f64;
            for &u in acts {
                if u >= m {
                    return Err(ChainError::InvalidPolicy(format!(
                        "action {} out of range",
                        u + 1
                    )));
                }
                probs[x * m + u] = w;
            }
        }
        Ok(Policy { n, m, probs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn prob(&self, x: usize, u: usize) -> f64 {
        self.probs[x * self.m + u]
    }

    /// `K(· | x)`.
    pub fn at(&self, x: usize) -> &[f64] {
        &self.probs[x * self.m..(x + 1) * self.m]
    }

    /// Actions with positive probability at `x`.
    pub fn support_at(&self, x: usize) -> Vec<usize> {
        (0..self.m).filter(|&u| self.prob(x, u) > 0.0).collect()
    }

    pub(crate) fn from_parts_unchecked(n: usize, m: usize, probs: Vec<f64>) -> Self {
        Policy { n, m, probs }
    }
}

/// Default relative support threshold: coordinates below `1e-9 * max` are zero.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-9;

/// Joint pmf `f(x, u)` over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    n: usize,
    m: usize,
    mass: Vec<f64>,
    relative_tol: f64,
}

impl JointDistribution {
    pub fn new(n: usize, m: usize, mass: Vec<f64>) -> Result<Self, ChainError> {
        if mass.len() != n * m {
            return Err(ChainError::DimensionMismatch(format!(
                "joint pmf has {} entries, expected {}",
                mass.len(),
                n * m
            )));
        }
        if mass.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ChainError::InvalidPolicy(
                "joint pmf has a negative or non-finite entry".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ChainError::InvalidPolicy(format!(
                "joint pmf sums to {total}"
            )));
        }
        Ok(JointDistribution {
            n,
            m,
            mass,
            relative_tol: DEFAULT_SUPPORT_TOL,
        })
    }

    pub fn with_support_tol(mut self, relative_tol: f64) -> Self {
        self.relative_tol = relative_tol;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mass(&self, x: usize, u: usize) -> f64 {
        self.mass[x * self.m + u]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    /// `f_X(x) = sum_u f(x, u)`.
    pub fn marginal(&self) -> Vec<f64> {
        self.mass.chunks(self.m).map(|c| c.iter().sum()).collect()
    }

    /// Absolute cutoff derived from the relative tolerance.
    pub fn threshold(&self) -> f64 {
        let max = self.mass.iter().cloned().fold(0.0, f64::max);
        self.relative_tol * max
    }

    pub fn support_states(&self) -> StateSet {
        let t = self.threshold();
        self.marginal()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > t)
            .map(|(x, _)| x)
            .collect()
    }

    pub fn support_pairs(&self) -> Vec<(usize, usize)> {
        let t = self.threshold();
        (0..self.n)
            .flat_map(|x| (0..self.m).map(move |u| (x, u)))
            .filter(|&(x, u)| self.mass(x, u) > t)
            .collect()
    }

    /// Convex combination `sum_i w_i f_i`. Weights are renormalized.
    pub fn mixture(parts: &[(f64, &JointDistribution)]) -> Result<Self, ChainError> {
        let first = parts
            .first()
            .ok_or_else(|| ChainError::DimensionMismatch("empty mixture".into()))?
            .1;
        let (n, m) = (first.n, first.m);
        let wsum: f64 = parts.iter().map(|(w, _)| *w).sum();
        let mut mass = vec![0.0; n * m];
        for (w, f) in parts {
            if f.n != n || f.m != m {
                return Err(ChainError::DimensionMismatch(
                    "mixture components differ in shape".into(),
                ));
            }
            for (acc, p) in mass.iter_mut().zip(&f.mass) {
                *acc += w / wsum * p;
            }
        }
        Self::new(n, m, mass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub chain: ControlledChain,
    pub policy: Policy,
}

/// The ordinary Markov chain `P_K(x+ | x)` obtained by averaging over a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopChain {
    n: usize,
    /// `transition[x * n + y] = P_K(y | x)`.
    transition: Vec<f64>,
    provenance: Option<Provenance>,
}

impl ClosedLoopChain {
    /// A closed loop given directly by its row-stochastic transition matrix.
    pub fn from_matrix(rows: &[Vec<f64>]) -> Result<Self, ChainError> {
        let n = rows.len();
        let mut transition = Vec::with_capacity(n * n);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ChainError::DimensionMismatch(format!(
                    "row {} has {} entries, expected {n}",
                    x + 1,
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(ChainError::InvalidPolicy(format!(
                    "row {} has an entry outside [0, 1]",
                    x + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ChainError::InvalidPolicy(format!(
                    "row {} sums to {sum}",
                    x + 1
                )));
            }
            transition.extend_from_slice(row);
        }
        Ok(ClosedLoopChain {
            n,
            transition,
            provenance: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.transition[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.transition[x * self.n..(x + 1) * self.n]
    }

    pub fn has_edge(&self, x: usize, y: usize) -> bool {
        self.prob(x, y) > EDGE_CUTOFF
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Positive-probability successor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|x| (0..self.n).filter(|&y| self.has_edge(x, y)).collect())
            .collect()
    }
}

pub fn closed_loop(
    chain: &ControlledChain,
    policy: &Policy,
) -> Result<ClosedLoopChain, ChainError> {
    let (n, m) = (chain.n(), chain.m());
    if policy.n() != n || policy.m() != m {
        return Err(ChainError::DimensionMismatch(format!(
            "chain is {n} states x {m} actions, policy is {} x {}",
            policy.n(),
            policy.m()
        )));
    }
    let mut transition = vec![0.0; n * n];
    for x in 0..n {
        let out = &mut transition[x * n..(x + 1) * n];
        for u in 0..m {
            let k = policy.prob(x, u);
            if k == 0.0 {
                continue;
            }
            for (acc, q) in out.iter_mut().zip(chain.row(x, u)) {
                *acc += k * q;
            }
        }
    }
    Ok(ClosedLoopChain {
        n,
        transition,
        provenance: Some(Provenance {
            chain: chain.clone(),
            policy: policy.clone(),
        }),
    })
}

/// A set of states together with its partition into recurrent classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecurrentClasses {
    pub states: StateSet,
    /// Ordered by smallest member.
    pub classes: Vec<StateSet>,
}

impl RecurrentClasses {
    fn from_classes(mut classes: Vec<StateSet>) -> Self {
        classes.sort_by_key(|c| c.iter().next().copied());
        let states = classes.iter().flatten().copied().collect();
        RecurrentClasses { states, classes }
    }
}

/// States in closed strongly connected components of the positive-edge graph.
pub fn recurrent_states(closed: &ClosedLoopChain) -> RecurrentClasses {
    let adj = closed.adjacency();
    let comps = graph::tarjan(&adj);
    let is_closed = comps.closed(&adj);
    let classes = comps
        .members
        .iter()
        .zip(is_closed)
        .filter(|(_, c)| *c)
        .map(|(mem, _)| mem.iter().copied().collect())
        .collect();
    RecurrentClasses::from_classes(classes)
}

/// Recurrent classes that avoid `forbidden` and never step into it.
///
/// A closed class with an edge into `forbidden` contains a forbidden state,
/// so the whole class is dropped, not only the offending states.
pub fn safe_recurrent_states(closed: &ClosedLoopChain, forbidden: &StateSet) -> RecurrentClasses {
    let rec = recurrent_states(closed);
    let classes = rec
        .classes
        .into_iter()
        .filter(|class| {
            class.iter().all(|&x| {
                !forbidden.contains(&x) && forbidden.iter().all(|&y| !closed.has_edge(x, y))
            })
        })
        .collect();
    RecurrentClasses::from_classes(classes)
}

/// Samples `X_0 = start, X_1, ..., X_{horizon-1}`.
pub fn simulate(
    closed: &ClosedLoopChain,
    start: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<usize>, ChainError> {
    let n = closed.n();
    if start >= n {
        return Err(ChainError::StateOutOfRange { state: start, n });
    }
    // cumulative sums over edges only, so dust never gets sampled
    let tables: Vec<Vec<(f64, usize)>> = (0..n)
        .map(|x| {
            let mut acc = 0.0;
            (0..n)
                .filter(|&y| closed.has_edge(x, y))
                .map(|y| {
                    acc += closed.prob(x, y);
                    (acc, y)
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = Vec::with_capacity(horizon);
    let mut state = start;
    for step in 0..horizon {
        path.push(state);
        if step + 1 == horizon {
            break;
        }
        let table = &tables[state];
        let total = table.last().map_or(0.0, |e| e.0);
        let r = rng.random::<f64>() * total;
        let idx = table.partition_point(|e| e.0 <= r).min(table.len() - 1);
        state = table[idx].1;
    }
    Ok(path)
}

/// Renders a state set 1-based, e.g. `{1, 2, 3}`.
pub struct StateSetDisplay<'a>(pub &'a StateSet);

impl fmt::Display for StateSetDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", x + 1)?;
        }
        write!(f, "}}")
    }
}
