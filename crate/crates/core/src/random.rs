//! Random controlled chains for fuzzing and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::chain::{ControlledChain, StateSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForbiddenMode {
    Empty,
    All,
    /// Each state forbidden independently with this probability.
    Bernoulli(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomChainConfig {
    pub states: usize,
    pub actions: usize,
    /// Probability that a given kernel entry is positive.
    pub density: f64,
    pub forbidden: ForbiddenMode,
}

/// Every row gets at least one positive entry; positive entries are
/// uniform weights normalized so the row sums to one.
pub fn random_chain<R: Rng + ?Sized>(config: &RandomChainConfig, rng: &mut R) -> ControlledChain {
    let (n, m) = (config.states, config.actions);
    let mut kernel = vec![0.0; n * m * n];
    let mut targets: Vec<usize> = (0..n).collect();
    for row in kernel.chunks_mut(n) {
        let mut any = false;
        for p in row.iter_mut() {
            if rng.random::<f64>() < config.density {
                *p = rng.random_range(0.05..1.0);
                any = true;
            }
        }
        if !any {
            targets.shuffle(rng);
            row[targets[0]] = 1.0;
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
    let forbidden: StateSet = match config.forbidden {
        ForbiddenMode::Empty => StateSet::new(),
        ForbiddenMode::All => (0..n).collect(),
        ForbiddenMode::Bernoulli(p) => (0..n).filter(|_| rng.random::<f64>() < p).collect(),
    };
    ControlledChain::new(n, m, kernel, forbidden).expect("generated chain is valid")
}
