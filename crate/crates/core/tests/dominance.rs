//! Every safe recurrent class reachable by some memoryless policy yields a
//! feasible point; the optimum must dominate all of them and their mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saferecur::maxent::residuals;
use saferecur::random::{random_chain, ForbiddenMode, RandomChainConfig};
use saferecur::{
    closed_loop, entropy, feasible_point_from_policy, marginal_entropy, safe_recurrent_states,
    solve_maxent, solve_maxent_marginal, ControlledChain, JointDistribution, SolverOptions,
    SupportSelection,
};

const MARGIN: f64 = 1e-6;

fn feasible_points(chain: &ControlledChain) -> Vec<JointDistribution> {
    let mut points = Vec::new();
    for sel in SupportSelection::all(chain.n(), chain.m()) {
        let k = sel.to_policy(chain.m());
        let closed = closed_loop(chain, &k).unwrap();
        for class in safe_recurrent_states(&closed, chain.forbidden()).classes {
            points.push(feasible_point_from_policy(chain, &k, &class).unwrap());
        }
    }
    points
}

fn check(chain: &ControlledChain, rng: &mut ChaCha8Rng) -> usize {
    let joint = solve_maxent(chain, &SolverOptions::default()).unwrap();
    let marginal = solve_maxent_marginal(chain, &SolverOptions::default()).unwrap();
    let points = feasible_points(chain);
    assert_eq!(points.is_empty(), joint.f.is_none());
    for g in &points {
        let r = residuals(chain, &[], g);
        assert!(r.invariance <= 1e-10 && r.forbidden_mass == 0.0);
        assert!(g.support_states().is_subset(&joint.support));
        assert!(joint.entropy >= entropy(g) - MARGIN);
        assert!(marginal.objective_value >= marginal_entropy(g) - MARGIN);
    }
    if points.len() >= 2 {
        for _ in 0..20 {
            let a = &points[rng.random_range(0..points.len())];
            let b = &points[rng.random_range(0..points.len())];
            let w = rng.random_range(0.01..0.99);
            let mix = JointDistribution::mixture(&[(w, a), (1.0 - w, b)]).unwrap();
            assert!(mix.support_states().is_subset(&joint.support));
            assert!(joint.entropy >= entropy(&mix) - MARGIN);
            assert!(marginal.objective_value >= marginal_entropy(&mix) - MARGIN);
        }
        // the union of all supports is reached by the uniform mixture
        let w = 1.0 / points.len() as f64;
        let parts: Vec<(f64, &JointDistribution)> = points.iter().map(|p| (w, p)).collect();
        let all = JointDistribution::mixture(&parts).unwrap();
        assert_eq!(all.support_states(), joint.support);
    }
    points.len()
}

#[test]
fn reference_chain_dominates_every_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let count = check(&saferecur::fixtures::example1(), &mut rng);
    assert!(count > 0);
}

#[test]
fn random_chains_dominate_every_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for i in 0..150 {
        let cfg = RandomChainConfig {
            states: rng.random_range(2..=4),
            actions: rng.random_range(2..=3),
            density: rng.random_range(0.2..0.7),
            forbidden: if i % 4 == 0 {
                ForbiddenMode::Empty
            } else {
                ForbiddenMode::Bernoulli(0.25)
            },
        };
        let chain = random_chain(&cfg, &mut rng);
        checked += check(&chain, &mut rng);
    }
    assert!(checked > 100);
}

/// A policy achieving the whole set may only use actions that carry mass
/// under the optimum.
fn check_zero_pattern(chain: &ControlledChain) -> usize {
    let report = solve_maxent(chain, &SolverOptions::default()).unwrap();
    let Some(f) = &report.f else { return 0 };
    let mut hits = 0;
    for sel in SupportSelection::all(chain.n(), chain.m()) {
        let k = sel.to_policy(chain.m());
        let closed = closed_loop(chain, &k).unwrap();
        if safe_recurrent_states(&closed, chain.forbidden()).states != report.support {
            continue;
        }
        hits += 1;
        for &x in &report.support {
            for &u in &sel.allowed[x] {
                assert!(f.mass(x, u) > f.threshold(), "state {x} action {u}");
            }
        }
    }
    assert!(hits > 0);
    hits
}

#[test]
fn achieving_policies_use_only_optimal_actions() {
    assert!(check_zero_pattern(&saferecur::fixtures::example1()) > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let cfg = RandomChainConfig {
            states: rng.random_range(2..=4),
            actions: rng.random_range(2..=3),
            density: rng.random_range(0.2..0.7),
            forbidden: ForbiddenMode::Bernoulli(0.2),
        };
        check_zero_pattern(&random_chain(&cfg, &mut rng));
    }
}
