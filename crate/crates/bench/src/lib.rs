//! Synthetic studies for benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensq_core::{compute_scores, MatchedSet, MatchedStudy, ScoreMatrix, Statistic};

/// A study of `n_sets` sets of `set_size` units with uniform outcomes
/// recorded to two decimals and a shift of `effect` on the treated unit.
pub fn synthetic_study(n_sets: usize, set_size: usize, effect: f64, seed: u64) -> MatchedStudy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = (0..n_sets)
        .map(|i| {
            let treated = rng.random_range(0..set_size);
            let outcomes = (0..set_size)
                .map(|j| {
                    let y: f64 = rng.random_range(-1.0..1.0) + if j == treated { effect } else { 0.0 };
                    (y * 100.0).round() / 100.0
                })
                .collect();
            MatchedSet::new(format!("s{i}"), outcomes, treated)
        })
        .collect();
    MatchedStudy::new(sets).expect("synthetic study is valid")
}

/// Difference-in-means scores of [`synthetic_study`].
pub fn synthetic_scores(n_sets: usize, set_size: usize, effect: f64, seed: u64) -> ScoreMatrix {
    compute_scores(&synthetic_study(n_sets, set_size, effect, seed), &Statistic::default())
        .expect("scores of a valid study")
}
