//! Finite-sample sensitivity analysis for matched pairs.
//!
//! Under a bound `Γ_i` on pair `i`, the pair's contribution is stochastically
//! dominated by a two-point law putting mass `Γ_i / (1 + Γ_i)` on the larger
//! score. Under a quantile bound `Γ_(k) <= Γ_0`, the dominating law keeps
//! `Γ_0` on the `k` pairs with the smallest score gaps and puts the rest at
//! their larger score. Tail probabilities of the resulting sum are computed
//! exactly by sparse convolution or by Monte Carlo with common random
//! numbers.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SensError};
use crate::inference::SensitivityConstraint;
use crate::rng::{substream, DOMAIN_PAIR_MC};
use crate::scores::ScoreMatrix;
use crate::study::Gamma;

/// Default number of Monte-Carlo draws.
pub const DEFAULT_DRAWS: usize = 100_000;
/// Largest support the exact convolution may reach.
pub const MAX_EXACT_SUPPORT: usize = 1_000_000;
/// Relative spacing of the lattice that score values are rounded to.
pub const LATTICE_RELATIVE_STEP: f64 = 1e-9;
const MC_BATCH: usize = 1024;

/// The dominating two-point law of every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWorstCaseLaw {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Probability of `hi`.
    pub p_hi: Vec<f64>,
}

fn ensure_pairs(scores: &ScoreMatrix) -> Result<()> {
    match scores.sets().iter().position(|s| s.size() != 2) {
        Some(i) => Err(SensError::NotPairStudy(i)),
        None => Ok(()),
    }
}

/// Worst-case law for pair-specific bounds.
pub fn worst_case_pair_law(scores: &ScoreMatrix, gamma: &[Gamma]) -> Result<PairWorstCaseLaw> {
    ensure_pairs(scores)?;
    if gamma.len() != scores.n_sets() {
        return Err(SensError::LengthMismatch {
            expected: scores.n_sets(),
            got: gamma.len(),
        });
    }
    let mut law = PairWorstCaseLaw {
        lo: Vec::with_capacity(gamma.len()),
        hi: Vec::with_capacity(gamma.len()),
        p_hi: Vec::with_capacity(gamma.len()),
    };
    for (set, g) in scores.sets().iter().zip(gamma) {
        law.lo.push(set.min());
        law.hi.push(set.max());
        law.p_hi.push(g.odds_probability());
    }
    Ok(law)
}

/// Indices (ascending) of the `k` pairs with the smallest `|q_i1 - q_i2|`,
/// ties going to the lower index.
pub fn select_pairs_quantile(scores: &ScoreMatrix, k: usize) -> Result<Vec<usize>> {
    ensure_pairs(scores)?;
    let n = scores.n_sets();
    if k == 0 || k > n {
        return Err(SensError::KOutOfRange { k, n_sets: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps lower indices first among equal gaps
    order.sort_by(|&a, &b| scores.sets()[a].range().total_cmp(&scores.sets()[b].range()));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Per-pair bounds `Γ_0` on `selected` and unbounded elsewhere.
pub fn quantile_gammas(n_sets: usize, selected: &[usize], gamma0: Gamma) -> Vec<Gamma> {
    let mut g = vec![Gamma::UNBOUNDED; n_sets];
    for &i in selected {
        g[i] = gamma0;
    }
    g
}

/// Monte-Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub draws: usize,
    pub seed: u64,
    /// Report `(1 + count) / (M + 1)` instead of `count / M`.
    pub add_one: bool,
}

impl MonteCarlo {
    pub fn new(draws: usize, seed: u64) -> Self {
        MonteCarlo {
            draws,
            seed,
            add_one: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMethod {
    MonteCarlo(MonteCarlo),
    ExactDp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailProbability {
    pub p: f64,
    /// `sqrt(p (1 - p) / M)` for Monte-Carlo estimates.
    pub mc_stderr: Option<f64>,
}

/// Rounding of score values to a common integer lattice so that sums of
/// equal scores compare exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Lattice {
    unit: f64,
}

impl Lattice {
    fn for_law(law: &PairWorstCaseLaw) -> Self {
        let scale = law
            .lo
            .iter()
            .chain(&law.hi)
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        Lattice {
            unit: if scale > 0.0 {
                LATTICE_RELATIVE_STEP * scale
            } else {
                1.0
            },
        }
    }

    fn key(&self, v: f64) -> i64 {
        (v / self.unit).round() as i64
    }
}

/// Exact distribution of the dominating sum, on the rounding lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    unit: f64,
    /// `(lattice key, probability)` in ascending key order.
    support: Vec<(i64, f64)>,
    /// Accumulated rounding allowance, in lattice units.
    slack: i64,
}

impl ExactDistribution {
    /// Support points as real values.
    pub fn support(&self) -> Vec<(f64, f64)> {
        self.support
            .iter()
            .map(|&(k, p)| (k as f64 * self.unit, p))
            .collect()
    }

    /// `P(T >= c)`, counting support points within the rounding allowance of
    /// `c` as reaching it.
    pub fn tail_at(&self, c: f64) -> f64 {
        let threshold = (c / self.unit).round();
        if threshold < i64::MIN as f64 {
            return 1.0;
        }
        if threshold > i64::MAX as f64 {
            return 0.0;
        }
        self.tail_at_key(threshold as i64 - self.slack)
    }

    fn tail_at_key(&self, key: i64) -> f64 {
        let start = self.support.partition_point(|&(k, _)| k < key);
        let p: f64 = self.support[start..].iter().map(|&(_, p)| p).sum();
        p.min(1.0)
    }
}

impl PairWorstCaseLaw {
    pub fn n_pairs(&self) -> usize {
        self.lo.len()
    }

    fn keys(&self, lattice: Lattice) -> (Vec<i64>, Vec<i64>) {
        (
            self.lo.iter().map(|&v| lattice.key(v)).collect(),
            self.hi.iter().map(|&v| lattice.key(v)).collect(),
        )
    }

    /// Exact law of the sum by convolving the two-point laws on a sparse
    /// support, failing once the support exceeds `limit` points.
    ///
    /// Lattice keys that can only differ through rounding of equal sums are
    /// merged into the largest of them, which keeps commensurate scores on a
    /// compact support and only ever moves mass upward.
    pub fn exact_distribution(&self, limit: usize) -> Result<ExactDistribution> {
        let lattice = Lattice::for_law(self);
        let (lo, hi) = self.keys(lattice);
        let mut offset: i64 = 0;
        let mut dist: Vec<(i64, f64)> = vec![(0, 1.0)];
        let mut merged = Vec::new();
        let mut processed: i64 = 0;
        for i in 0..self.n_pairs() {
            let p = self.p_hi[i];
            if p >= 1.0 || lo[i] == hi[i] {
                offset += hi[i];
                continue;
            }
            offset += lo[i];
            processed += 1;
            let step = hi[i] - lo[i];
            merged.clear();
            // merge of the two sorted, shifted copies
            let (mut a, mut b) = (0, 0);
            while a < dist.len() || b < dist.len() {
                let take_low = b == dist.len() || (a < dist.len() && dist[a].0 <= dist[b].0 + step);
                let (key, mass) = if take_low {
                    a += 1;
                    (dist[a - 1].0, dist[a - 1].1 * (1.0 - p))
                } else {
                    b += 1;
                    (dist[b - 1].0 + step, dist[b - 1].1 * p)
                };
                match merged.last_mut() {
                    Some((k, m)) if key - *k <= processed => {
                        *k = key;
                        *m += mass;
                    }
                    _ => merged.push((key, mass)),
                }
            }
            if merged.len() > limit {
                return Err(SensError::SupportTooLarge { limit });
            }
            std::mem::swap(&mut dist, &mut merged);
        }
        Ok(ExactDistribution {
            unit: lattice.unit,
            support: dist.into_iter().map(|(k, p)| (k + offset, p)).collect(),
            slack: rounding_slack(self.n_pairs()),
        })
    }

    /// Monte-Carlo estimate of `P(T >= t)` where `t` is given on the lattice.
    ///
    /// Draw `m` of pair `i` is `hi_i` when the uniform `U_im < p_hi_i`. The
    /// uniforms depend only on `(seed, batch)`, so every call with the same
    /// seed and number of pairs reuses them.
    fn monte_carlo_count(&self, lo: &[i64], hi: &[i64], threshold: i64, mc: &MonteCarlo) -> u64 {
        let n_batches = mc.draws.div_ceil(MC_BATCH);
        (0..n_batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = substream(mc.seed, DOMAIN_PAIR_MC, b as u64);
                let in_batch = MC_BATCH.min(mc.draws - b * MC_BATCH);
                let mut count = 0u64;
                for _ in 0..in_batch {
                    let mut total: i64 = 0;
                    for i in 0..lo.len() {
                        let u: f64 = rng.random();
                        total += if u < self.p_hi[i] { hi[i] } else { lo[i] };
                    }
                    if total >= threshold {
                        count += 1;
                    }
                }
                count
            })
            .sum()
    }
}

/// Lattice units by which sums of `n` rounded values may differ from the
/// rounded sum.
fn rounding_slack(n: usize) -> i64 {
    n as i64 / 2 + 1
}

/// Observed statistic on the law's lattice.
fn observed_key(scores: &ScoreMatrix, lattice: Lattice) -> i64 {
    scores
        .sets()
        .iter()
        .map(|s| lattice.key(s.treated_score()))
        .sum()
}

/// Per-pair bounds implied by a constraint.
pub fn constraint_gammas(scores: &ScoreMatrix, constraint: &SensitivityConstraint) -> Result<Vec<Gamma>> {
    match constraint {
        SensitivityConstraint::Vector(g) => Ok(g.clone()),
        SensitivityConstraint::Quantile { k, gamma0 } => {
            let selected = select_pairs_quantile(scores, *k)?;
            Ok(quantile_gammas(scores.n_sets(), &selected, *gamma0))
        }
    }
}

/// Upper bound on `P(T >= T_obs)` over all assignment laws satisfying the
/// constraint.
pub fn pair_tail_probability(
    scores: &ScoreMatrix,
    constraint: &SensitivityConstraint,
    method: &TailMethod,
) -> Result<TailProbability> {
    ensure_pairs(scores)?;
    let gamma = constraint_gammas(scores, constraint)?;
    let law = worst_case_pair_law(scores, &gamma)?;
    let lattice = Lattice::for_law(&law);
    // sums equal to the observed one up to rounding count as reaching it
    let t_obs = observed_key(scores, lattice) - rounding_slack(law.n_pairs());
    match method {
        TailMethod::ExactDp => {
            let dist = law.exact_distribution(MAX_EXACT_SUPPORT)?;
            Ok(TailProbability {
                p: dist.tail_at_key(t_obs),
                mc_stderr: None,
            })
        }
        TailMethod::MonteCarlo(mc) => {
            if mc.draws == 0 {
                return Err(SensError::InvalidParameter(
                    "Monte-Carlo draws must be >= 1".into(),
                ));
            }
            let (lo, hi) = law.keys(lattice);
            let count = law.monte_carlo_count(&lo, &hi, t_obs, mc);
            let m = mc.draws as f64;
            let p = if mc.add_one {
                (1.0 + count as f64) / (m + 1.0)
            } else {
                count as f64 / m
            };
            Ok(TailProbability {
                p,
                mc_stderr: Some((p * (1.0 - p) / m).sqrt()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sign_study(n: usize) -> ScoreMatrix {
        ScoreMatrix::from_scores(vec![vec![1.0, 0.0]; n], &vec![0; n]).unwrap()
    }

    fn quantile(k: usize, g: f64) -> SensitivityConstraint {
        SensitivityConstraint::Quantile {
            k,
            gamma0: Gamma::new(g).unwrap(),
        }
    }

    #[test]
    fn pair_law_examples() {
        let m = ScoreMatrix::from_scores(vec![vec![1.0, -1.0]; 3], &[0, 0, 0]).unwrap();
        let law = worst_case_pair_law(
            &m,
            &[Gamma::new(3.0).unwrap(), Gamma::ONE, Gamma::UNBOUNDED],
        )
        .unwrap();
        assert_eq!(law.p_hi, vec![0.75, 0.5, 1.0]);
        assert_eq!(law.hi, vec![1.0; 3]);
        assert_eq!(law.lo, vec![-1.0; 3]);
        let triple = ScoreMatrix::from_scores(vec![vec![1.0, 0.0, 2.0]], &[0]).unwrap();
        assert_eq!(
            worst_case_pair_law(&triple, &[Gamma::ONE]),
            Err(SensError::NotPairStudy(0))
        );
    }

    #[test]
    fn pair_selection_examples() {
        let m = ScoreMatrix::from_scores(
            vec![vec![0.25, -0.25], vec![1.0, -1.0], vec![0.5, -0.5]],
            &[0, 0, 0],
        )
        .unwrap();
        assert_eq!(select_pairs_quantile(&m, 2).unwrap(), vec![0, 2]);
        assert_eq!(select_pairs_quantile(&m, 3).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            select_pairs_quantile(&m, 0),
            Err(SensError::KOutOfRange { .. })
        ));
        let ties = ScoreMatrix::from_scores(vec![vec![0.5, -0.5]; 3], &[0, 1, 0]).unwrap();
        assert_eq!(select_pairs_quantile(&ties, 1).unwrap(), vec![0]);
    }

    #[test]
    fn sign_study_binomial_tails() {
        let m = sign_study(5);
        let exact = pair_tail_probability(&m, &quantile(5, 1.0), &TailMethod::ExactDp).unwrap();
        assert_eq!(exact.p, 0.03125);
        let exact = pair_tail_probability(&m, &quantile(3, 1.0), &TailMethod::ExactDp).unwrap();
        assert_eq!(exact.p, 0.125);
        let mc = pair_tail_probability(
            &m,
            &quantile(5, 1.0),
            &TailMethod::MonteCarlo(MonteCarlo::new(DEFAULT_DRAWS, 42)),
        )
        .unwrap();
        let se = (0.03125_f64 * (1.0 - 0.03125) / DEFAULT_DRAWS as f64).sqrt();
        assert!((mc.p - 0.03125).abs() <= 3.0 * se, "mc p = {}", mc.p);
        assert!(mc.mc_stderr.unwrap() > 0.0);
    }

    #[test]
    fn observed_below_support_gives_one() {
        let m = ScoreMatrix::from_scores(vec![vec![1.0, 0.0]; 4], &[1, 1, 1, 1]).unwrap();
        let p = pair_tail_probability(&m, &quantile(4, 2.0), &TailMethod::ExactDp).unwrap();
        assert_eq!(p.p, 1.0);
        let p = pair_tail_probability(
            &m,
            &quantile(4, 2.0),
            &TailMethod::MonteCarlo(MonteCarlo::new(5000, 1)),
        )
        .unwrap();
        assert_eq!(p.p, 1.0);
    }

    #[test]
    fn add_one_variant() {
        let m = sign_study(20);
        let mc = MonteCarlo {
            draws: 1000,
            seed: 3,
            add_one: true,
        };
        let p = pair_tail_probability(&m, &quantile(20, 1.0), &TailMethod::MonteCarlo(mc)).unwrap();
        // 2^-20 is far below 1/1001, so the count is zero
        assert_eq!(p.p, 1.0 / 1001.0);
    }

    #[test]
    fn support_guard() {
        let scores: Vec<Vec<f64>> = (0..25).map(|i| vec![(i as f64 + 1.0).sqrt() * 1.37, 0.0]).collect();
        let m = ScoreMatrix::from_scores(scores, &[0; 25]).unwrap();
        let gamma = vec![Gamma::new(2.0).unwrap(); 25];
        let law = worst_case_pair_law(&m, &gamma).unwrap();
        assert_eq!(
            law.exact_distribution(1000).unwrap_err(),
            SensError::SupportTooLarge { limit: 1000 }
        );
    }

    #[test]
    fn exact_matches_enumeration_at_gamma_one() {
        let scores = vec![vec![0.3, -1.2], vec![2.5, 0.5], vec![-0.7, 0.1], vec![1.1, 1.9]];
        let m = ScoreMatrix::from_scores(scores.clone(), &[0, 0, 1, 1]).unwrap();
        let p = pair_tail_probability(&m, &quantile(4, 1.0), &TailMethod::ExactDp).unwrap();
        let t_obs = m.observed();
        let mut hits = 0;
        for mask in 0..16u32 {
            let t: f64 = (0..4).map(|i| scores[i][((mask >> i) & 1) as usize]).sum();
            if t >= t_obs - 1e-12 {
                hits += 1;
            }
        }
        assert_eq!(p.p, hits as f64 / 16.0);
    }

    #[test]
    fn common_random_numbers_keep_monotonicity() {
        let scores: Vec<Vec<f64>> = (0..12).map(|i| vec![0.2 * i as f64, -0.1 * i as f64 + 0.3]).collect();
        let m = ScoreMatrix::from_scores(scores, &[0; 12]).unwrap();
        let mc = TailMethod::MonteCarlo(MonteCarlo::new(4000, 99));
        let mut prev = 0.0;
        for g in [1.0, 1.2, 1.5, 2.0, 3.0, 5.0] {
            let p = pair_tail_probability(&m, &quantile(12, g), &mc).unwrap().p;
            assert!(p >= prev);
            prev = p;
        }
        let mut prev = 0.0;
        for k in (1..=12).rev() {
            let p = pair_tail_probability(&m, &quantile(k, 1.5), &mc).unwrap().p;
            assert!(p >= prev);
            prev = p;
        }
    }
}
