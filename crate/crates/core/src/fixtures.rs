//! Reference instances.

use crate::chain::ControlledChain;

/// Eight states, two actions, state 4 forbidden (0-based index 3).
///
/// Its maximal safe recurrent set is `{1, 2, 3, 7, 8}` (1-based), split into
/// the classes `{1, 2, 3}` and `{7, 8}`.
pub fn example1() -> ControlledChain {
    ControlledChain::from_action_matrices(&example1_matrices(), [3])
        .expect("reference chain is valid")
}

pub fn example1_matrices() -> Vec<Vec<Vec<f64>>> {
    vec![
        vec![
            vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0],
            vec![0.3, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.2, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.3],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.1, 0.3, 0.0, 0.0, 0.6],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        ],
        vec![
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.2, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.2, 0.0, 0.0, 0.2, 0.0, 0.6, 0.0],
            vec![0.0, 0.0, 0.2, 0.8, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.9],
        ],
    ]
}
