//! Exact combinatorial computations of the maximal safe recurrent set.
//!
//! Two routes that share no code with each other: literal enumeration of
//! policy zero patterns (bitset reachability), and a maximal end component
//! decomposition restricted to safe state-action pairs (Tarjan). A third
//! operation builds invariant pmfs of closed classes, which are feasible
//! points of the entropy program.

use std::thread;

use nalgebra::{DMatrix, DVector};

use crate::chain::{closed_loop, ControlledChain, JointDistribution, Policy, StateSet};
use crate::error::OracleError;
use crate::graph;

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// A nonempty set of allowed actions at every state: the zero pattern of a
/// randomized policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSelection {
    pub allowed: Vec<Vec<usize>>,
}

impl SupportSelection {
    /// Number of selections, `(2^m - 1)^n`, as a float so it cannot overflow.
    pub fn count(n: usize, m: usize) -> f64 {
        (2f64.powi(m as i32) - 1.0).powi(n as i32)
    }

    /// Selection number `index` in mixed radix, state 0 least significant.
    /// Digit `d` at a state stands for the action mask `d + 1`.
    pub fn decode(mut index: u64, n: usize, m: usize) -> Self {
        let radix = (1u64 << m) - 1;
        let allowed = (0..n)
            .map(|_| {
                let mask = index % radix + 1;
                index /= radix;
                (0..m).filter(|&u| mask >> u & 1 == 1).collect()
            })
            .collect();
        SupportSelection { allowed }
    }

    /// Every selection, in index order. Only sensible for tiny chains.
    pub fn all(n: usize, m: usize) -> impl Iterator<Item = SupportSelection> {
        let total = Self::count(n, m) as u64;
        (0..total).map(move |i| Self::decode(i, n, m))
    }

    /// Uniform weights on the allowed actions.
    pub fn to_policy(&self, m: usize) -> Policy {
        Policy::uniform_over(m, &self.allowed).expect("selections are nonempty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BruteForceOptions {
    pub cap: u64,
    /// Number of threads the selection range is split across; 0 means one per core.
    pub workers: usize,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        BruteForceOptions {
            cap: DEFAULT_ENUMERATION_CAP,
            workers: 1,
        }
    }
}

#[derive(Clone)]
struct Bits {
    words: Vec<u64>,
}

impl Bits {
    fn new(n: usize) -> Self {
        Bits {
            words: vec![0; n.div_ceil(64)],
        }
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn clear(&mut self) {
        self.words.fill(0);
    }

    fn or_assign(&mut self, other: &Bits) -> bool {
        let mut changed = false;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            let next = *a | b;
            changed |= next != *a;
            *a = next;
        }
        changed
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64)
                .filter(move |b| bits >> b & 1 == 1)
                .map(move |b| w * 64 + b)
        })
    }
}

/// Union over all zero patterns of the safe recurrent states of the
/// corresponding closed loop.
pub fn brute_force_safe_recurrent(chain: &ControlledChain) -> Result<StateSet, OracleError> {
    brute_force_safe_recurrent_with(chain, BruteForceOptions::default())
}

pub fn brute_force_safe_recurrent_with(
    chain: &ControlledChain,
    options: BruteForceOptions,
) -> Result<StateSet, OracleError> {
    let (n, m) = (chain.n(), chain.m());
    let needed = SupportSelection::count(n, m);
    if needed > options.cap as f64 {
        return Err(OracleError::EnumerationCap {
            needed,
            cap: options.cap,
        });
    }
    let total = needed as u64;
    let workers = match options.workers {
        0 => thread::available_parallelism().map_or(1, |p| p.get()),
        w => w,
    }
    .clamp(1, total.max(1) as usize);

    if workers == 1 {
        return Ok(enumerate_range(chain, 0, total));
    }
    let chunk = total.div_ceil(workers as u64);
    let parts: Vec<StateSet> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers as u64)
            .map(|w| {
                let lo = (w * chunk).min(total);
                let hi = ((w + 1) * chunk).min(total);
                s.spawn(move || enumerate_range(chain, lo, hi))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("enumeration worker panicked"))
            .collect()
    });
    Ok(parts.into_iter().flatten().collect())
}

fn enumerate_range(chain: &ControlledChain, lo: u64, hi: u64) -> StateSet {
    let (n, m) = (chain.n(), chain.m());
    let forbidden = chain.forbidden();
    // successor bitsets and safety of each (x, u)
    let mut succ = vec![Bits::new(n); n * m];
    let mut safe_pair = vec![true; n * m];
    for x in 0..n {
        for u in 0..m {
            for (y, &p) in chain.row(x, u).iter().enumerate() {
                if p > 0.0 {
                    succ[x * m + u].set(y);
                }
            }
            safe_pair[x * m + u] = !forbidden.contains(&x) && !chain.row_touches(x, u, forbidden);
        }
    }

    let radix = (1u64 << m) - 1;
    let mut found = StateSet::new();
    let mut adj = vec![Bits::new(n); n];
    let mut safe = vec![true; n];
    let mut reach = vec![Bits::new(n); n];
    let mut frontier = Bits::new(n);
    for index in lo..hi {
        let mut rest = index;
        for x in 0..n {
            let mask = rest % radix + 1;
            rest /= radix;
            adj[x].clear();
            safe[x] = true;
            for u in 0..m {
                if mask >> u & 1 == 1 {
                    adj[x].or_assign(&succ[x * m + u]);
                    safe[x] &= safe_pair[x * m + u];
                }
            }
        }
        // reflexive-transitive closure, one search per state
        for x in 0..n {
            let r = &mut reach[x];
            r.clear();
            r.set(x);
            frontier.clear();
            frontier.set(x);
            loop {
                let mut next = Bits::new(n);
                for y in frontier.iter() {
                    next.or_assign(&adj[y]);
                }
                let mut grew = Bits::new(n);
                for (g, (nw, rw)) in grew.words.iter_mut().zip(next.words.iter().zip(&r.words)) {
                    *g = nw & !rw;
                }
                if !r.or_assign(&next) {
                    break;
                }
                frontier = grew;
            }
        }
        for x in 0..n {
            if found.contains(&x) {
                continue;
            }
            // x is recurrent iff everything it reaches reaches it back
            let recurrent = reach[x].iter().all(|y| reach[y].get(x));
            if recurrent && reach[x].iter().all(|y| safe[y]) {
                found.insert(x);
            }
        }
        if found.len() == n {
            break;
        }
    }
    found
}

/// Safe recurrent set with class partition and admissible actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafeRecurrentResult {
    pub states: StateSet,
    pub classes: Vec<StateSet>,
    /// Actions usable at each state without leaving its class or touching
    /// the forbidden set; empty outside `states`.
    pub admissible: Vec<Vec<usize>>,
}

impl SafeRecurrentResult {
    /// Uniform over the admissible actions on `states`, uniform elsewhere.
    pub fn witness_policy(&self, m: usize) -> Policy {
        let allowed: Vec<Vec<usize>> = self
            .admissible
            .iter()
            .map(|a| {
                if a.is_empty() {
                    (0..m).collect()
                } else {
                    a.clone()
                }
            })
            .collect();
        Policy::uniform_over(m, &allowed).expect("nonempty action sets")
    }
}

/// Maximal end components of the sub-model of safe state-action pairs.
pub fn mec_decomposition(chain: &ControlledChain) -> SafeRecurrentResult {
    let (n, m) = (chain.n(), chain.m());
    let forbidden = chain.forbidden();
    let mut allowed: Vec<Vec<usize>> = (0..n)
        .map(|x| {
            if forbidden.contains(&x) {
                Vec::new()
            } else {
                (0..m)
                    .filter(|&u| !chain.row_touches(x, u, forbidden))
                    .collect()
            }
        })
        .collect();
    let successors = |x: usize, u: usize| {
        chain
            .row(x, u)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(y, _)| y)
            .collect::<Vec<_>>()
    };

    loop {
        // drop pairs that can reach a dead state, until stable
        loop {
            let alive: Vec<bool> = allowed.iter().map(|a| !a.is_empty()).collect();
            let mut changed = false;
            for x in 0..n {
                let before = allowed[x].len();
                allowed[x].retain(|&u| successors(x, u).iter().all(|&y| alive[y]));
                changed |= allowed[x].len() != before;
            }
            if !changed {
                break;
            }
        }
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|x| {
                let mut s: Vec<usize> = allowed[x].iter().flat_map(|&u| successors(x, u)).collect();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        let comps = graph::tarjan(&adj);
        let mut changed = false;
        for x in 0..n {
            let c = comps.component_of[x];
            let before = allowed[x].len();
            allowed[x].retain(|&u| successors(x, u).iter().all(|&y| comps.component_of[y] == c));
            changed |= allowed[x].len() != before;
        }
        if !changed {
            let states: StateSet = (0..n).filter(|&x| !allowed[x].is_empty()).collect();
            let mut classes: Vec<StateSet> = comps
                .members
                .iter()
                .filter(|mem| !allowed[mem[0]].is_empty())
                .map(|mem| mem.iter().copied().collect())
                .collect();
            classes.sort_by_key(|c: &StateSet| c.iter().next().copied());
            return SafeRecurrentResult {
                states,
                classes,
                admissible: allowed,
            };
        }
    }
}

/// Invariant pmf of `policy`'s closed loop concentrated on `class`:
/// `f(x, u) = pi(x) K(u | x)` with `pi` stationary on the class.
pub fn feasible_point_from_policy(
    chain: &ControlledChain,
    policy: &Policy,
    class: &StateSet,
) -> Result<JointDistribution, OracleError> {
    let (n, m) = (chain.n(), chain.m());
    if class.is_empty() {
        return Err(OracleError::EmptyClass);
    }
    if class.iter().any(|&x| x >= n) {
        return Err(OracleError::DimensionMismatch(
            "class state out of range".into(),
        ));
    }
    let closed =
        closed_loop(chain, policy).map_err(|e| OracleError::DimensionMismatch(e.to_string()))?;
    if class.iter().any(|x| chain.is_forbidden(*x)) {
        return Err(OracleError::ClassNotSafe);
    }
    let members: Vec<usize> = class.iter().copied().collect();
    let local = |x: usize| members.binary_search(&x).ok();
    let adj = closed.adjacency();
    let mut local_adj = vec![Vec::new(); members.len()];
    for (i, &x) in members.iter().enumerate() {
        for &y in &adj[x] {
            match local(y) {
                Some(j) => local_adj[i].push(j),
                None if chain.is_forbidden(y) => return Err(OracleError::ClassNotSafe),
                None => return Err(OracleError::ClassNotClosed),
            }
        }
    }
    if graph::tarjan(&local_adj).len() != 1 {
        return Err(OracleError::ClassNotClosed);
    }

    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let k = members.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for (i, &x) in members.iter().enumerate() {
        for (j, &y) in members.iter().enumerate() {
            a[(j, i)] = closed.prob(x, y);
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    let pi = a.lu().solve(&rhs).ok_or(OracleError::ClassNotClosed)?;
    let pi: Vec<f64> = pi.iter().map(|p| p.max(0.0)).collect();
    let total: f64 = pi.iter().sum();

    let mut mass = vec![0.0; n * m];
    for (i, &x) in members.iter().enumerate() {
        for u in 0..m {
            mass[x * m + u] = pi[i] / total * policy.prob(x, u);
        }
    }
    JointDistribution::new(n, m, mass).map_err(|e| OracleError::DimensionMismatch(e.to_string()))
}
