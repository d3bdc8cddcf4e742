//! Policy extraction from an optimal joint pmf, exact certification of the
//! resulting safe recurrent set, and support-preserving reweighting.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{closed_loop, ControlledChain, JointDistribution, Policy, StateSet};
use crate::error::SynthesisError;
use crate::graph;

/// What the policy does at states outside the support of `f_X`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum OffSupportRule {
    #[default]
    Uniform,
    /// Take the column of this policy.
    Fixed(Policy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedPolicy {
    pub policy: Policy,
    pub support_states: StateSet,
    pub off_support: OffSupportRule,
}

/// `K(u | x) = f(x, u) / f_X(x)` on the support of `f_X`, the off-support
/// rule elsewhere. Pairs below the pmf's support threshold count as zero.
pub fn extract_policy(
    f: &JointDistribution,
    chain: &ControlledChain,
    off_support: OffSupportRule,
) -> Result<SynthesizedPolicy, SynthesisError> {
    let (n, m) = (chain.n(), chain.m());
    if f.n() != n || f.m() != m {
        return Err(SynthesisError::DimensionMismatch(format!(
            "pmf is {} x {}, chain is {n} x {m}",
            f.n(),
            f.m()
        )));
    }
    if let OffSupportRule::Fixed(g) = &off_support {
        if g.n() != n || g.m() != m {
            return Err(SynthesisError::DimensionMismatch(
                "off-support policy has the wrong shape".into(),
            ));
        }
    }
    let support_states = f.support_states();
    if support_states.is_empty() {
        return Err(SynthesisError::EmptySupport);
    }
    let cut = f.threshold();
    let mut probs = vec![0.0; n * m];
    for x in 0..n {
        let col = &mut probs[x * m..(x + 1) * m];
        if support_states.contains(&x) {
            let kept: Vec<f64> = (0..m)
                .map(|u| {
                    let p = f.mass(x, u);
                    if p > cut {
                        p
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = kept.iter().sum();
            for (c, p) in col.iter_mut().zip(kept) {
                *c = p / total;
            }
        } else {
            match &off_support {
                OffSupportRule::Uniform => col.fill(1.0 / m as f64),
                OffSupportRule::Fixed(g) => col.copy_from_slice(g.at(x)),
            }
        }
    }
    Ok(SynthesizedPolicy {
        policy: Policy::from_parts_unchecked(n, m, probs),
        support_states,
        off_support,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupportViolation {
    OutOfRange(usize),
    Forbidden(usize),
    /// Positive one-step probability into the forbidden set.
    LeaksIntoForbidden(usize),
    /// The state's class in the closed loop has an outgoing edge.
    NotInClosedClass(usize),
    /// The state's closed class contains unclaimed states.
    ClassNotClaimed {
        state: usize,
        missing: StateSet,
    },
}

impl SupportViolation {
    pub fn state(&self) -> usize {
        match *self {
            SupportViolation::OutOfRange(x)
            | SupportViolation::Forbidden(x)
            | SupportViolation::LeaksIntoForbidden(x)
            | SupportViolation::NotInClosedClass(x)
            | SupportViolation::ClassNotClaimed { state: x, .. } => x,
        }
    }
}

impl fmt::Display for SupportViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupportViolation::OutOfRange(x) => write!(f, "state {} out of range", x + 1),
            SupportViolation::Forbidden(x) => write!(f, "state {} is forbidden", x + 1),
            SupportViolation::LeaksIntoForbidden(x) => {
                write!(f, "state {} can step into the forbidden set", x + 1)
            }
            SupportViolation::NotInClosedClass(x) => {
                write!(f, "state {} is not in a closed class", x + 1)
            }
            SupportViolation::ClassNotClaimed { state, missing } => write!(
                f,
                "class of state {} also contains unclaimed {}",
                state + 1,
                crate::chain::StateSetDisplay(missing)
            ),
        }
    }
}

/// Proof that a claimed set is a union of closed, safe, recurrent classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub classes: Vec<StateSet>,
}

/// Exact graph check of a claimed safe recurrent set under `policy`.
///
/// Edges are closed-loop entries above [`crate::chain::EDGE_CUTOFF`].
pub fn verify(
    chain: &ControlledChain,
    policy: &Policy,
    claimed: &StateSet,
) -> Result<Certificate, Vec<SupportViolation>> {
    let n = chain.n();
    let mut violations = Vec::new();
    for &x in claimed {
        if x >= n {
            violations.push(SupportViolation::OutOfRange(x));
        }
    }
    if !violations.is_empty() {
        return Err(violations);
    }
    let closed = match closed_loop(chain, policy) {
        Ok(c) => c,
        Err(_) => {
            return Err(claimed
                .iter()
                .map(|&x| SupportViolation::NotInClosedClass(x))
                .collect())
        }
    };
    let adj = closed.adjacency();
    let comps = graph::tarjan(&adj);
    let is_closed = comps.closed(&adj);

    let mut classes: Vec<StateSet> = Vec::new();
    let mut seen = vec![false; comps.len()];
    for &x in claimed {
        if chain.is_forbidden(x) {
            violations.push(SupportViolation::Forbidden(x));
            continue;
        }
        if chain.forbidden().iter().any(|&y| closed.has_edge(x, y)) {
            violations.push(SupportViolation::LeaksIntoForbidden(x));
            continue;
        }
        let c = comps.component_of[x];
        if !is_closed[c] {
            violations.push(SupportViolation::NotInClosedClass(x));
            continue;
        }
        let members: StateSet = comps.members[c].iter().copied().collect();
        let missing: StateSet = members.difference(claimed).copied().collect();
        if !missing.is_empty() {
            violations.push(SupportViolation::ClassNotClaimed { state: x, missing });
            continue;
        }
        if !seen[c] {
            seen[c] = true;
            classes.push(members);
        }
    }
    if violations.is_empty() {
        classes.sort_by_key(|c| c.iter().next().copied());
        Ok(Certificate { classes })
    } else {
        Err(violations)
    }
}

/// Multiplicative reweighting of a policy's positive entries.
#[derive(Debug, Clone, PartialEq)]
pub enum Reweighting {
    /// `weights[x * m + u]` multiplies `K(u | x)`; must be positive wherever `K` is.
    Explicit(Vec<f64>),
    /// Factors drawn uniformly from `[0.01, 1)`.
    Random { seed: u64 },
}

/// New policy `K'(u | x) ∝ K(u | x) w(x, u)`, with the same zero pattern as `K`.
pub fn perturb_within_support(
    policy: &Policy,
    reweighting: &Reweighting,
) -> Result<Policy, SynthesisError> {
    let (n, m) = (policy.n(), policy.m());
    let weights = match reweighting {
        Reweighting::Explicit(w) => {
            if w.len() != n * m {
                return Err(SynthesisError::DimensionMismatch(format!(
                    "{} weights for a {n} x {m} policy",
                    w.len()
                )));
            }
            w.clone()
        }
        Reweighting::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..n * m).map(|_| rng.random_range(0.01..1.0)).collect()
        }
    };
    let mut probs = vec![0.0; n * m];
    for x in 0..n {
        for u in 0..m {
            let k = policy.prob(x, u);
            if k > 0.0 {
                let w = weights[x * m + u];
                if !(w.is_finite() && w > 0.0) {
                    return Err(SynthesisError::WeightPattern {
                        state: x,
                        action: u,
                    });
                }
                probs[x * m + u] = k * w;
            }
        }
        let col = &mut probs[x * m..(x + 1) * m];
        let total: f64 = col.iter().sum();
        col.iter_mut().for_each(|p| *p /= total);
    }
    Ok(Policy::from_parts_unchecked(n, m, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{safe_recurrent_states, ControlledChain};
    use crate::fixtures::example1;

    fn set(xs: &[usize]) -> StateSet {
        xs.iter().map(|x| x - 1).collect()
    }

    /// The optimal pmf as tabulated to two decimals for the reference chain.
    fn rounded_optimum() -> JointDistribution {
        let a1 = [0.0, 0.16, 0.0, 0.0, 0.0, 0.0, 0.15, 0.15];
        let a2 = [0.08, 0.11, 0.2, 0.0, 0.0, 0.0, 0.15, 0.0];
        let mass = (0..8).flat_map(|x| [a1[x], a2[x]]).collect();
        JointDistribution::new(8, 2, mass).unwrap()
    }

    #[test]
    fn extract_from_rounded_table() {
        let chain = example1();
        let sp = extract_policy(&rounded_optimum(), &chain, OffSupportRule::Uniform).unwrap();
        assert_eq!(sp.support_states, set(&[1, 2, 3, 7, 8]));
        let k = &sp.policy;
        assert_eq!(k.at(0), &[0.0, 1.0]);
        assert_eq!(k.at(2), &[0.0, 1.0]);
        assert_eq!(k.at(7), &[1.0, 0.0]);
        assert!((k.prob(6, 0) - 0.5).abs() < 1e-12);
        assert!((k.prob(1, 0) - 0.16 / 0.27).abs() < 1e-12);
        for x in [3, 4, 5] {
            assert_eq!(k.at(x), &[0.5, 0.5]);
        }
    }

    #[test]
    fn extract_uniform_pmf() {
        let chain = ControlledChain::new(2, 2, vec![0.5; 8], []).unwrap();
        let f = JointDistribution::new(2, 2, vec![0.25; 4]).unwrap();
        let sp = extract_policy(&f, &chain, OffSupportRule::Uniform).unwrap();
        assert_eq!(sp.policy, Policy::uniform(2, 2));
    }

    #[test]
    fn extract_point_mass() {
        let chain = ControlledChain::new(2, 2, vec![0.5; 8], []).unwrap();
        let f = JointDistribution::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let sp = extract_policy(&f, &chain, OffSupportRule::Uniform).unwrap();
        assert_eq!(sp.policy.at(0), &[0.0, 1.0]);
        assert_eq!(sp.policy.at(1), &[0.5, 0.5]);
        let g = Policy::deterministic(2, &[0, 1]).unwrap();
        let sp = extract_policy(&f, &chain, OffSupportRule::Fixed(g)).unwrap();
        assert_eq!(sp.policy.at(1), &[0.0, 1.0]);
    }

    #[test]
    fn verify_reference_support() {
        let chain = example1();
        let sp = extract_policy(&rounded_optimum(), &chain, OffSupportRule::Uniform).unwrap();
        let cert = verify(&chain, &sp.policy, &set(&[1, 2, 3, 7, 8])).unwrap();
        assert_eq!(cert.classes, vec![set(&[1, 2, 3]), set(&[7, 8])]);
    }

    #[test]
    fn verify_rejects_transient_state() {
        let chain = example1();
        let sp = extract_policy(&rounded_optimum(), &chain, OffSupportRule::Uniform).unwrap();
        let err = verify(&chain, &sp.policy, &set(&[1, 2, 3, 5, 7, 8])).unwrap_err();
        assert_eq!(err, vec![SupportViolation::NotInClosedClass(4)]);
    }

    #[test]
    fn verify_rejects_forbidden_and_partial_claims() {
        let chain = example1();
        let sp = extract_policy(&rounded_optimum(), &chain, OffSupportRule::Uniform).unwrap();
        let err = verify(&chain, &sp.policy, &set(&[4])).unwrap_err();
        assert_eq!(err, vec![SupportViolation::Forbidden(3)]);
        let err = verify(&chain, &sp.policy, &set(&[7])).unwrap_err();
        assert_eq!(
            err,
            vec![SupportViolation::ClassNotClaimed {
                state: 6,
                missing: set(&[8])
            }]
        );
        // state 6 steps into 4 under either action
        let err = verify(&chain, &sp.policy, &set(&[6])).unwrap_err();
        assert_eq!(err, vec![SupportViolation::LeaksIntoForbidden(5)]);
    }

    #[test]
    fn verify_empty_claim() {
        let chain = example1();
        let cert = verify(&chain, &Policy::uniform(8, 2), &StateSet::new()).unwrap();
        assert!(cert.classes.is_empty());
    }

    #[test]
    fn reweight_state_two() {
        let chain = example1();
        let sp = extract_policy(&rounded_optimum(), &chain, OffSupportRule::Uniform).unwrap();
        let mut w = vec![1.0; 16];
        w[2] = 0.9 / sp.policy.prob(1, 0);
        w[3] = 0.1 / sp.policy.prob(1, 1);
        let k = perturb_within_support(&sp.policy, &Reweighting::Explicit(w)).unwrap();
        assert!((k.prob(1, 0) - 0.9).abs() < 1e-12);
        let cl = closed_loop(&chain, &k).unwrap();
        assert_eq!(
            safe_recurrent_states(&cl, chain.forbidden()).states,
            set(&[1, 2, 3, 7, 8])
        );
    }

    #[test]
    fn identity_reweighting_is_noop() {
        let chain = example1();
        let sp = extract_policy(&rounded_optimum(), &chain, OffSupportRule::Uniform).unwrap();
        let k = perturb_within_support(&sp.policy, &Reweighting::Explicit(vec![1.0; 16])).unwrap();
        for x in 0..8 {
            for u in 0..2 {
                assert!((k.prob(x, u) - sp.policy.prob(x, u)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn off_support_reweighting_keeps_recurrent_set() {
        let chain = example1();
        let sp = extract_policy(&rounded_optimum(), &chain, OffSupportRule::Uniform).unwrap();
        let mut w = vec![1.0; 16];
        w[8] = 5.0; // state 5, action 1
        let k = perturb_within_support(&sp.policy, &Reweighting::Explicit(w)).unwrap();
        assert!(k.prob(4, 0) > 0.8);
        let before =
            safe_recurrent_states(&closed_loop(&chain, &sp.policy).unwrap(), chain.forbidden());
        let after = safe_recurrent_states(&closed_loop(&chain, &k).unwrap(), chain.forbidden());
        assert_eq!(before, after);
    }

    #[test]
    fn zero_weight_on_support_is_rejected() {
        let k = Policy::uniform(2, 2);
        let err = perturb_within_support(&k, &Reweighting::Explicit(vec![1.0, 0.0, 1.0, 1.0]));
        assert_eq!(
            err,
            Err(SynthesisError::WeightPattern {
                state: 0,
                action: 1
            })
        );
    }
}
