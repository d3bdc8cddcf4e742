//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use saferecur::oracle::brute_force_safe_recurrent;
use saferecur::random::{random_chain, ForbiddenMode, RandomChainConfig};
use saferecur::{
    closed_loop, entropy, extract_policy, feasible_point_from_policy, mec_decomposition,
    perturb_within_support, safe_recurrent_states, simulate, solve_maxent, solve_maxent_marginal,
    solve_with_linear_constraints, ControlledChain, LinearConstraint, OffSupportRule, Policy,
    Reweighting, SolveReport, SolveStatus, SolverOptions, StateSet, SupportSelection,
};

const INSTANCES: usize = 600;
const ENTROPY_MARGIN: f64 = 1e-6;

/// Rounded optimum for the reference chain, `[action][state]`.
const REFERENCE_F: [[f64; 8]; 2] = [
    [0.0, 0.16, 0.0, 0.0, 0.0, 0.0, 0.15, 0.15],
    [0.08, 0.11, 0.2, 0.0, 0.0, 0.0, 0.15, 0.0],
];
/// Reference policy on the support states 1, 2, 3, 7, 8 (`None` = free).
const REFERENCE_K: [[Option<f64>; 8]; 2] = [
    [
        Some(0.0),
        Some(0.58),
        Some(0.0),
        None,
        None,
        None,
        Some(0.5),
        Some(1.0),
    ],
    [
        Some(1.0),
        Some(0.42),
        Some(1.0),
        None,
        None,
        None,
        Some(0.5),
        Some(0.0),
    ],
];

type Verdict = Result<String, String>;
type Check<'a> = Box<dyn FnOnce() -> Verdict + 'a>;

fn fixture() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/example1.json")
}

fn solve_json() -> (Value, Duration) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_saferecur"))
        .args(["solve", fixture().to_str().unwrap(), "--json", "--verify"])
        .output()
        .expect("binary runs");
    let elapsed = start.elapsed();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    (
        serde_json::from_slice(&out.stdout).expect("valid JSON"),
        elapsed,
    )
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| {
            r.as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .collect()
        })
        .collect()
}

struct Case {
    chain: ControlledChain,
    exact: StateSet,
    mec: StateSet,
    joint: SolveReport,
    marginal: SolveReport,
}

fn build_cases() -> (Vec<Case>, Duration) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let cases = (0..INSTANCES)
        .map(|i| {
            let forbidden = match i % 6 {
                0 => ForbiddenMode::Empty,
                1 => ForbiddenMode::All,
                _ => ForbiddenMode::Bernoulli(rng.random_range(0.1..0.5)),
            };
            let cfg = RandomChainConfig {
                states: rng.random_range(2..=6),
                actions: rng.random_range(2..=3),
                density: rng.random_range(0.1..0.8),
                forbidden,
            };
            let chain = random_chain(&cfg, &mut rng);
            let options = SolverOptions::default();
            Case {
                exact: brute_force_safe_recurrent(&chain).expect("within the cap"),
                mec: mec_decomposition(&chain).states,
                joint: solve_maxent(&chain, &options).expect("joint solve converges"),
                marginal: solve_maxent_marginal(&chain, &options)
                    .expect("marginal solve converges"),
                chain,
            }
        })
        .collect();
    (cases, start.elapsed())
}

fn criterion_1() -> Verdict {
    let (v, elapsed) = solve_json();
    let set = &v["safe_recurrent_set"];
    let classes = &v["classes"];
    let ok = *set == serde_json::json!([1, 2, 3, 7, 8])
        && *classes == serde_json::json!([[1, 2, 3], [7, 8]])
        && elapsed < Duration::from_secs(1);
    let msg = format!(
        "X^R_F = {set}, classes {classes}, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2() -> Verdict {
    let (v, _) = solve_json();
    let f = matrix(&v["f"]);
    let mut worst: f64 = 0.0;
    let mut positive = 0;
    let mut pattern = true;
    for u in 0..2 {
        for x in 0..8 {
            worst = worst.max((f[u][x] - REFERENCE_F[u][x]).abs());
            positive += (f[u][x] > 0.0) as usize;
            pattern &= (f[u][x] > 0.0) == (REFERENCE_F[u][x] > 0.0);
        }
    }
    let msg = format!("max |f* - F*| = {worst:.4}, {positive} positive pairs");
    if worst <= 0.01 && positive == 7 && pattern {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Verdict {
    let (v, _) = solve_json();
    let k = matrix(&v["policy"]);
    let mut worst: f64 = 0.0;
    for u in 0..2 {
        for x in 0..8 {
            if let Some(p) = REFERENCE_K[u][x] {
                worst = worst.max((k[u][x] - p).abs());
            }
        }
    }
    let msg = format!(
        "max |K - K*| = {worst:.4} on support states, K(., 2) = ({:.4}, {:.4})",
        k[0][1], k[1][1]
    );
    if worst <= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4(cases: &[Case], elapsed: Duration) -> Verdict {
    let mut bad = Vec::new();
    let (mut empty, mut full_f, mut no_f) = (0, 0, 0);
    for (i, c) in cases.iter().enumerate() {
        let ok = c.joint.support == c.exact
            && c.mec == c.exact
            && (c.joint.status == SolveStatus::Infeasible) == c.exact.is_empty();
        if !ok {
            bad.push(i);
        }
        empty += c.exact.is_empty() as usize;
        full_f += (c.chain.forbidden().len() == c.chain.n()) as usize;
        no_f += c.chain.forbidden().is_empty() as usize;
    }
    let msg = format!(
        "{}/{} agree ({empty} empty, {full_f} with F = X, {no_f} with F = {{}}) in {:.1} s{}",
        cases.len() - bad.len(),
        cases.len(),
        elapsed.as_secs_f64(),
        if bad.is_empty() {
            String::new()
        } else {
            format!("; mismatches {bad:?}")
        }
    );
    if bad.is_empty() && cases.len() >= 500 && elapsed < Duration::from_secs(120) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Every (policy zero pattern, safe class) pair, deduplicated by the
/// pattern restricted to the class.
fn feasible_points(chain: &ControlledChain) -> Vec<saferecur::JointDistribution> {
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    for sel in SupportSelection::all(chain.n(), chain.m()) {
        let k = sel.to_policy(chain.m());
        let closed = closed_loop(chain, &k).unwrap();
        for class in safe_recurrent_states(&closed, chain.forbidden()).classes {
            let key: Vec<(usize, Vec<usize>)> =
                class.iter().map(|&x| (x, sel.allowed[x].clone())).collect();
            if seen.insert(key) {
                points.push(feasible_point_from_policy(chain, &k, &class).unwrap());
            }
        }
    }
    points
}

fn criterion_5(cases: &[Case]) -> Verdict {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = cases.len().div_ceil(workers);
    let results: Vec<(usize, Vec<String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .chunks(chunk)
            .enumerate()
            .map(|(w, part)| {
                s.spawn(move || {
                    let mut count = 0;
                    let mut bad = Vec::new();
                    for (j, c) in part.iter().enumerate() {
                        for g in feasible_points(&c.chain) {
                            count += 1;
                            let subset = g.support_states().is_subset(&c.joint.support);
                            let dominated = c.joint.entropy >= entropy(&g) - ENTROPY_MARGIN;
                            if !(subset && dominated) {
                                bad.push(format!("instance {}", w * chunk + j));
                            }
                        }
                    }
                    (count, bad)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let count: usize = results.iter().map(|r| r.0).sum();
    let bad: Vec<String> = results.into_iter().flat_map(|r| r.1).collect();
    let msg = format!("{count} feasible points checked, {} violations", bad.len());
    if bad.is_empty() && count > 0 {
        Ok(msg)
    } else {
        Err(format!("{msg}: {:?}", &bad[..bad.len().min(5)]))
    }
}

fn residual_ok(r: &SolveReport, beta_slack: bool) -> bool {
    let res = &r.residuals;
    res.invariance <= 1e-8
        && res.forbidden_mass <= 1e-12
        && res.normalization <= 1e-10
        && (!beta_slack || res.extra <= 1e-8)
}

fn criterion_6(cases: &[Case]) -> Verdict {
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (i, c) in cases.iter().enumerate() {
        for r in [&c.joint, &c.marginal] {
            if r.status == SolveStatus::Optimal {
                checked += 1;
                if !residual_ok(r, true) {
                    bad.push(i);
                }
            }
        }
        // a random action budget on a third of the instances
        if i % 3 == 0 {
            let h: Vec<f64> = (0..c.chain.m())
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let lo = h.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = h.iter().cloned().fold(0.0, f64::max);
            let beta = rng.random_range(lo..=hi);
            let extra = [LinearConstraint { h, beta }];
            let r = solve_with_linear_constraints(&c.chain, &extra, &SolverOptions::default())
                .expect("constrained solve converges");
            if r.status == SolveStatus::Optimal {
                checked += 1;
                let f = r.f.as_ref().unwrap();
                let lhs: f64 = (0..c.chain.n())
                    .flat_map(|x| (0..c.chain.m()).map(move |u| (x, u)))
                    .map(|(x, u)| extra[0].h[u] * f.mass(x, u))
                    .sum();
                if !residual_ok(&r, true) || lhs > beta + 1e-8 || !r.support.is_subset(&c.exact) {
                    bad.push(i);
                }
            }
        }
    }
    let msg = format!("{checked} optima checked, {} violations", bad.len());
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}: {bad:?}"))
    }
}

fn criterion_7(cases: &[Case]) -> Verdict {
    let reference = saferecur::fixtures::example1();
    let j = solve_maxent(&reference, &SolverOptions::default()).expect("converges");
    let m = solve_maxent_marginal(&reference, &SolverOptions::default()).expect("converges");
    let mut bad: Vec<String> = Vec::new();
    if j.support != m.support {
        bad.push("reference".into());
    }
    let mut feasible = 0;
    for (i, c) in cases.iter().enumerate() {
        if c.joint.status == SolveStatus::Optimal {
            feasible += 1;
        }
        if c.joint.support != c.marginal.support {
            bad.push(format!("instance {i}"));
        }
    }
    let msg = format!(
        "reference + {feasible} feasible instances, {} mismatches",
        bad.len()
    );
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}: {bad:?}"))
    }
}

fn reference_policy() -> (ControlledChain, Policy, StateSet) {
    let chain = saferecur::fixtures::example1();
    let report = solve_maxent(&chain, &SolverOptions::default()).expect("converges");
    let f = report.f.expect("feasible");
    let k = extract_policy(&f, &chain, OffSupportRule::Uniform).expect("support nonempty");
    saferecur::verify(&chain, &k.policy, &report.support).expect("certified");
    (chain, k.policy, report.support)
}

fn criterion_8() -> Verdict {
    let (chain, k, support) = reference_policy();
    let closed = closed_loop(&chain, &k).unwrap();
    let mut runs = 0;
    let mut bad = Vec::new();
    for &start in &support {
        for seed in 0..10 {
            let path = simulate(&closed, start, 1_000_000, seed).unwrap();
            runs += 1;
            if path.iter().any(|x| *x == 3 || !support.contains(x)) {
                bad.push((start + 1, seed));
            }
        }
    }
    let msg = format!(
        "{runs} runs of 10^6 steps, {} left the set or hit state 4",
        bad.len()
    );
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}: {bad:?}"))
    }
}

fn criterion_9(cases: &[Case]) -> Verdict {
    let (chain, k, support) = reference_policy();
    let mut instances = vec![(chain, k, support)];
    for c in cases {
        if let Some(f) = &c.joint.f {
            let k = extract_policy(f, &c.chain, OffSupportRule::Uniform)
                .unwrap()
                .policy;
            instances.push((c.chain.clone(), k, c.joint.support.clone()));
        }
    }
    let mut bad = 0;
    for (i, (chain, k, support)) in instances.iter().enumerate() {
        for r in 0..100u64 {
            let moved = perturb_within_support(
                k,
                &Reweighting::Random {
                    seed: i as u64 * 1000 + r,
                },
            )
            .unwrap();
            let closed = closed_loop(chain, &moved).unwrap();
            if safe_recurrent_states(&closed, chain.forbidden()).states != *support {
                bad += 1;
            }
        }
    }
    let msg = format!(
        "{} instances x 100 reweightings, {bad} changed the safe set",
        instances.len()
    );
    if bad == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let text = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(format!("panic: {text}"))
    })
}

fn main() -> ExitCode {
    let (cases, elapsed) = build_cases();
    let criteria: Vec<(&str, Check)> = vec![
        ("reference set reproduction", Box::new(criterion_1)),
        ("reference distribution reproduction", Box::new(criterion_2)),
        ("reference policy reproduction", Box::new(criterion_3)),
        (
            "oracle triple agreement",
            Box::new(|| criterion_4(&cases, elapsed)),
        ),
        ("entropy dominance", Box::new(|| criterion_5(&cases))),
        ("constraint residuals", Box::new(|| criterion_6(&cases))),
        (
            "marginal support equality",
            Box::new(|| criterion_7(&cases)),
        ),
        ("empirical safety", Box::new(criterion_8)),
        ("support equivalence", Box::new(|| criterion_9(&cases))),
    ];
    let mut failed = 0;
    println!();
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let verdict = run(check);
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(msg) => println!("PASS  criterion {}: {name}: {msg} [{secs:.2} s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {}: {name}: {msg} [{secs:.2} s]", i + 1);
            }
        }
    }
    println!("\nacceptance: {} passed, {failed} failed\n", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
