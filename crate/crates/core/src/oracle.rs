//! Brute-force reference implementations for tests.
//!
//! Everything here enumerates: assignments, confounder grids, or subsets.
//! None of it is used by the analysis routines.

use crate::error::{Result, SensError};
use crate::scores::ScoreMatrix;
use crate::set_asymptotic::PerSetMoments;
use crate::study::Gamma;

pub use crate::model::{assignment_law, set_probabilities, SensitivityModelSpec};

/// Largest number of joint assignments enumerated.
pub const MAX_ASSIGNMENTS: usize = 1_000_000;
/// Largest set handled by [`bruteforce_worst_moments`].
pub const MAX_BRUTEFORCE_SET: usize = 5;
/// Largest study handled by [`bruteforce_best_subset`].
pub const MAX_SUBSET_SETS: usize = 12;
/// Default grid resolution per confounder coordinate.
pub const DEFAULT_GRID_POINTS: usize = 21;

const TIE_WINDOW: f64 = 1e-12;

fn check_enumerable(scores: &ScoreMatrix) -> Result<()> {
    let count: f64 = scores.sets().iter().map(|s| s.size() as f64).product();
    if count > MAX_ASSIGNMENTS as f64 {
        return Err(SensError::EnumerationTooLarge {
            count,
            limit: MAX_ASSIGNMENTS,
        });
    }
    Ok(())
}

/// Calls `visit(statistic, probability)` for every joint assignment.
fn enumerate(scores: &ScoreMatrix, probs: &[Vec<f64>], mut visit: impl FnMut(f64, f64)) {
    let sets = scores.sets();
    let mut idx = vec![0usize; sets.len()];
    loop {
        let mut t = 0.0;
        let mut p = 1.0;
        for (i, &j) in idx.iter().enumerate() {
            t += sets[i].scores()[j];
            p *= probs[i][j];
        }
        visit(t, p);
        let mut i = 0;
        loop {
            if i == idx.len() {
                return;
            }
            idx[i] += 1;
            if idx[i] < sets[i].size() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// `P(T >= c)` under the model, by enumerating every assignment.
///
/// Statistic values within `1e-9 (1 + |c|)` below `c` count as reaching it,
/// so atoms computed with a different summation order are not lost.
pub fn exact_tail_under_model(scores: &ScoreMatrix, spec: &SensitivityModelSpec, c: f64) -> Result<f64> {
    check_enumerable(scores)?;
    let sizes: Vec<usize> = scores.sets().iter().map(|s| s.size()).collect();
    let probs = assignment_law(&sizes, spec)?;
    let slack = 1e-9 * (1.0 + c.abs());
    let mut tail = 0.0;
    enumerate(scores, &probs, |t, p| {
        if t >= c - slack {
            tail += p;
        }
    });
    Ok(tail.min(1.0))
}

/// Exact mean and variance of `T` under the model.
pub fn exact_moments_under_model(scores: &ScoreMatrix, spec: &SensitivityModelSpec) -> Result<(f64, f64)> {
    check_enumerable(scores)?;
    let sizes: Vec<usize> = scores.sets().iter().map(|s| s.size()).collect();
    let probs = assignment_law(&sizes, spec)?;
    let (mut m1, mut m2) = (0.0, 0.0);
    enumerate(scores, &probs, |t, p| {
        m1 += p * t;
        m2 += p * t * t;
    });
    Ok((m1, m2 - m1 * m1))
}

/// Unnormalized treatment weights `Γ^u` for every grid value of `u`, or
/// `None` for an unbounded bias.
fn grid_weights(gamma: Gamma, grid: &[f64]) -> Option<Vec<f64>> {
    if gamma.is_unbounded() {
        None
    } else {
        Some(grid.iter().map(|&u| gamma.value().powf(u)).collect())
    }
}

/// Visits every confounder vector on the grid as a tuple of grid indices.
fn for_each_grid_point(n: usize, points: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; n];
    loop {
        visit(&idx);
        let mut i = 0;
        while i < n {
            idx[i] += 1;
            if idx[i] < points {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if i == n {
            return;
        }
    }
}

/// Visits the sums `(Σ w, Σ w q, Σ w q²)` over every grid point, where each
/// unit takes one of the grid weights.
fn for_each_weighted_sum(q: &[f64], weights: &[f64], mut visit: impl FnMut(f64, f64, f64)) {
    fn descend(q: &[f64], weights: &[f64], acc: (f64, f64, f64), visit: &mut impl FnMut(f64, f64, f64)) {
        let Some((&v, rest)) = q.split_last() else {
            visit(acc.0, acc.1, acc.2);
            return;
        };
        for &w in weights {
            descend(rest, weights, (acc.0 + w, acc.1 + w * v, acc.2 + w * v * v), visit);
        }
    }
    descend(q, weights, (0.0, 0.0, 0.0), &mut visit);
}

/// Grid search for an unbounded bias, where the mass sits on the units with
/// the largest `u`.
fn unbounded_grid_moments(q: &[f64], grid_points: usize) -> (f64, f64) {
    let mut best = f64::NEG_INFINITY;
    for_each_grid_point(q.len(), grid_points, |idx| {
        best = best.max(grid_moments(q, idx).0);
    });
    let spread = q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - q.iter().copied().fold(f64::INFINITY, f64::min);
    let window = TIE_WINDOW * best.abs().max(spread).max(f64::MIN_POSITIVE);
    let mut var = 0.0_f64;
    for_each_grid_point(q.len(), grid_points, |idx| {
        let (mean, v) = grid_moments(q, idx);
        if best - mean <= window {
            var = var.max(v);
        }
    });
    (best, var)
}

/// Mean and variance of one set's contribution under an unbounded bias with
/// confounders `idx`: the mass is spread evenly over the largest `u` values.
fn grid_moments(q: &[f64], idx: &[usize]) -> (f64, f64) {
    let top = idx.iter().copied().max().unwrap_or(0);
    let chosen: Vec<f64> = idx.iter().zip(q).filter(|(&g, _)| g == top).map(|(_, &v)| v).collect();
    let m = chosen.len() as f64;
    let mean = chosen.iter().sum::<f64>() / m;
    let var = chosen.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var)
}

/// Maximum of `E(T_i)` over confounders on a uniform grid in `[0, 1]^n`
/// (which contains every binary vector), then the maximum variance among
/// grid points attaining that mean.
pub fn bruteforce_worst_moments(q: &[f64], gamma: Gamma, grid_points: usize) -> Result<(f64, f64)> {
    let n = q.len();
    if n > MAX_BRUTEFORCE_SET {
        return Err(SensError::SetTooLarge {
            size: n,
            limit: MAX_BRUTEFORCE_SET,
        });
    }
    if grid_points < 2 {
        return Err(SensError::InvalidParameter("grid needs at least two points".into()));
    }
    let grid: Vec<f64> = (0..grid_points)
        .map(|i| i as f64 / (grid_points - 1) as f64)
        .collect();
    let Some(weights) = grid_weights(gamma, &grid) else {
        return Ok(unbounded_grid_moments(q, grid_points));
    };
    let mut best = f64::NEG_INFINITY;
    for_each_weighted_sum(q, &weights, |s0, s1, _| best = best.max(s1 / s0));
    let spread = q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - q.iter().copied().fold(f64::INFINITY, f64::min);
    let window = TIE_WINDOW * best.abs().max(spread).max(f64::MIN_POSITIVE);
    let mut var = 0.0_f64;
    for_each_weighted_sum(q, &weights, |s0, s1, s2| {
        let mean = s1 / s0;
        if best - mean <= window {
            var = var.max((s2 / s0 - mean * mean).max(0.0));
        }
    });
    Ok((best, var))
}

/// The size-`k` subset maximizing the worst-case mean and then variance,
/// with the remaining sets at their unbounded moments.
///
/// Subsets are visited in lexicographic order and only a strict improvement
/// replaces the incumbent.
pub fn bruteforce_best_subset(
    at_gamma0: &[PerSetMoments],
    unbounded: &[PerSetMoments],
    k: usize,
) -> Result<(Vec<usize>, f64, f64)> {
    let n = at_gamma0.len();
    if n > MAX_SUBSET_SETS {
        return Err(SensError::TooManySubsets {
            n_sets: n,
            limit: MAX_SUBSET_SETS,
        });
    }
    if unbounded.len() != n {
        return Err(SensError::LengthMismatch {
            expected: n,
            got: unbounded.len(),
        });
    }
    if k == 0 || k > n {
        return Err(SensError::KOutOfRange { k, n_sets: n });
    }
    let scale = at_gamma0
        .iter()
        .chain(unbounded)
        .fold(1.0_f64, |m, x| m.max(x.mu.abs()).max(x.var));
    let eps = TIE_WINDOW * scale * n as f64;
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let mut mu = 0.0;
        let mut var = 0.0;
        for i in 0..n {
            if combo.contains(&i) {
                mu += at_gamma0[i].mu;
                var += at_gamma0[i].var;
            } else {
                mu += unbounded[i].mu;
            }
        }
        let better = match &best {
            None => true,
            Some((_, bm, bv)) => mu > bm + eps || (mu >= bm - eps && var > bv + eps),
        };
        if better {
            best = Some((combo.clone(), mu, var));
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(best.expect("at least one subset"));
            }
            i -= 1;
            if combo[i] < n - k + i {
                combo[i] += 1;
                for j in i + 1..k {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}
