//! Large-sample sensitivity analysis for general matched sets.
//!
//! For each set, the worst-case law under a bound `Γ` puts weight `1` on the
//! `a` smallest scores and weight `Γ` on the rest, for the `a` that maximizes
//! the mean (then the variance). Summing over sets gives a Gaussian bounding
//! law for the statistic. Under a quantile constraint the `k` sets that lose
//! the least mean are held to `Γ_0` and the others sit at their maximum score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SensError};
use crate::inference::SensitivityConstraint;
use crate::scores::{ScoreMatrix, SetScores};
use crate::study::Gamma;

/// Relative window within which two candidate means count as tied.
pub const ARGMAX_TIE_TOLERANCE: f64 = 1e-12;

/// Worst-case mean and variance of one set's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSetMoments {
    pub mu: f64,
    pub var: f64,
    /// Number of low-weight units at the optimum; `None` for unbounded bias.
    pub argmax_a: Option<usize>,
}

/// Maximum mean of the set's contribution under bias `gamma`, and the
/// maximum variance among laws attaining it.
pub fn per_set_worst_moments(set: &SetScores, gamma: Gamma) -> PerSetMoments {
    let q = set.sorted();
    let n = q.len();
    if gamma.is_unbounded() {
        return PerSetMoments {
            mu: q[n - 1],
            var: 0.0,
            argmax_a: None,
        };
    }
    let g = gamma.value();
    // centre for accuracy of the second moment
    let centre = q.iter().sum::<f64>() / n as f64;
    let mut cum = Vec::with_capacity(n + 1);
    let mut cum_sq = Vec::with_capacity(n + 1);
    let (mut s1, mut s2) = (0.0, 0.0);
    cum.push(0.0);
    cum_sq.push(0.0);
    for &v in q {
        let c = v - centre;
        s1 += c;
        s2 += c * c;
        cum.push(s1);
        cum_sq.push(s2);
    }
    let (total, total_sq) = (cum[n], cum_sq[n]);
    let candidates: Vec<(f64, f64)> = (1..n)
        .map(|a| {
            let denom = a as f64 + g * (n - a) as f64;
            let mean = (cum[a] + g * (total - cum[a])) / denom;
            let second = (cum_sq[a] + g * (total_sq - cum_sq[a])) / denom;
            (mean, (second - mean * mean).max(0.0))
        })
        .collect();
    let best = candidates
        .iter()
        .map(|c| c.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let window = ARGMAX_TIE_TOLERANCE * best.abs().max(set.range()).max(f64::MIN_POSITIVE);
    let mut out = PerSetMoments {
        mu: best + centre,
        var: -1.0,
        argmax_a: None,
    };
    for (a, &(mean, var)) in candidates.iter().enumerate() {
        if best - mean <= window && var > out.var {
            out.var = var;
            out.argmax_a = Some(a + 1);
        }
    }
    out.mu = out.mu.clamp(q[0], q[n - 1]);
    out
}

/// Moments of every set at a common bias.
pub fn moments_at(scores: &ScoreMatrix, gamma: Gamma) -> Vec<PerSetMoments> {
    scores
        .sets()
        .par_iter()
        .map(|s| per_set_worst_moments(s, gamma))
        .collect()
}

/// The `k` sets (ascending indices) that lose the least mean when held to
/// `Γ_0` instead of being left unbounded.
///
/// Sets are ranked by `μ_i(∞) - μ_i(Γ_0)`, ties broken by larger
/// `v_i²(Γ_0)` first and then lower index.
pub fn select_sets_quantile(
    at_gamma0: &[PerSetMoments],
    unbounded: &[PerSetMoments],
    k: usize,
) -> Result<Vec<usize>> {
    let n = at_gamma0.len();
    if unbounded.len() != n {
        return Err(SensError::LengthMismatch {
            expected: n,
            got: unbounded.len(),
        });
    }
    if k == 0 || k > n {
        return Err(SensError::KOutOfRange { k, n_sets: n });
    }
    let gap: Vec<f64> = (0..n).map(|i| unbounded[i].mu - at_gamma0[i].mu).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        gap[a]
            .total_cmp(&gap[b])
            .then(at_gamma0[b].var.total_cmp(&at_gamma0[a].var))
            .then(a.cmp(&b))
    });
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Gaussian law bounding the statistic under a constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseGaussian {
    pub mu: f64,
    pub sigma2: f64,
    /// Sets held to the bound; all sets for vector constraints.
    pub selected: Vec<usize>,
}

/// Worst-case mean and variance of the statistic under `constraint`.
pub fn worst_case_gaussian(
    scores: &ScoreMatrix,
    constraint: &SensitivityConstraint,
) -> Result<WorstCaseGaussian> {
    let n = scores.n_sets();
    match constraint {
        SensitivityConstraint::Vector(gamma) => {
            if gamma.len() != n {
                return Err(SensError::LengthMismatch {
                    expected: n,
                    got: gamma.len(),
                });
            }
            let moments: Vec<PerSetMoments> = scores
                .sets()
                .par_iter()
                .zip(gamma.par_iter())
                .map(|(s, &g)| per_set_worst_moments(s, g))
                .collect();
            Ok(WorstCaseGaussian {
                mu: moments.iter().map(|m| m.mu).sum(),
                sigma2: moments.iter().map(|m| m.var).sum(),
                selected: (0..n).collect(),
            })
        }
        SensitivityConstraint::Quantile { k, gamma0 } => {
            let at_gamma0 = moments_at(scores, *gamma0);
            let unbounded = moments_at(scores, Gamma::UNBOUNDED);
            let selected = select_sets_quantile(&at_gamma0, &unbounded, *k)?;
            let mut in_sel = vec![false; n];
            for &i in &selected {
                in_sel[i] = true;
            }
            let mut mu = 0.0;
            let mut sigma2 = 0.0;
            for i in 0..n {
                if in_sel[i] {
                    mu += at_gamma0[i].mu;
                    sigma2 += at_gamma0[i].var;
                } else {
                    mu += unbounded[i].mu;
                }
            }
            Ok(WorstCaseGaussian {
                mu,
                sigma2,
                selected,
            })
        }
    }
}

/// Standard normal upper tail `1 - Φ(z)`.
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `1 - Φ((T - μ) / σ)` for `T >= μ`, and `1` below the mean.
///
/// A degenerate law gives `1` when `T` does not exceed the mean (up to
/// rounding) and `0` otherwise.
pub fn asymptotic_pvalue(t_obs: f64, law: &WorstCaseGaussian) -> f64 {
    if t_obs < law.mu {
        return 1.0;
    }
    if law.sigma2 <= 0.0 {
        let eps = 1e-12 * law.mu.abs().max(1.0);
        return if t_obs <= law.mu + eps { 1.0 } else { 0.0 };
    }
    normal_upper_tail((t_obs - law.mu) / law.sigma2.sqrt())
}

/// Bounds outside of which p-values are replaced by the conservative 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModifiedBounds {
    pub gamma_max: Gamma,
    pub k_min: usize,
}

impl Default for ModifiedBounds {
    fn default() -> Self {
        ModifiedBounds {
            gamma_max: Gamma::UNBOUNDED,
            k_min: 1,
        }
    }
}

pub fn modified_pvalue(p: f64, gamma0: Gamma, k: usize, bounds: &ModifiedBounds) -> f64 {
    if gamma0.value() > bounds.gamma_max.value() || k < bounds.k_min {
        1.0
    } else {
        p
    }
}
