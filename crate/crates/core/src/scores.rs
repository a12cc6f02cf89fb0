//! Per-unit scores of additive test statistics.
//!
//! A statistic of the form `T = Σ_i Σ_j Z_ij q_ij` is fully described by the
//! score matrix `q`. This module builds `q` for the difference-in-means and
//! m-statistics, caches the sorted scores and their cumulative sums used by
//! the worst-case moment search, and checks the monotonicity properties that
//! make sharp-null machinery valid for bounded nulls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SensError};
use crate::study::MatchedStudy;

/// Truncation and trimming of the m-statistic's ψ function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStatConfig {
    /// Outer truncation `κ`; `None` leaves ψ uncapped.
    pub kappa: Option<f64>,
    /// Inner trimming `ι`, `0 <= ι < κ`.
    pub iota: f64,
    /// Replaces the pooled median absolute difference as the scale.
    pub scale_override: Option<f64>,
}

impl MStatConfig {
    pub fn new(kappa: Option<f64>, iota: f64) -> Result<Self> {
        let cfg = MStatConfig {
            kappa,
            iota,
            scale_override: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iota >= 0.0 && self.iota.is_finite()) {
            return Err(SensError::InvalidParameter(format!(
                "inner trimming must be finite and >= 0, got {}",
                self.iota
            )));
        }
        if let Some(kappa) = self.kappa {
            if !(kappa > 0.0 && kappa.is_finite() && self.iota < kappa) {
                return Err(SensError::InvalidParameter(format!(
                    "truncation must satisfy 0 <= iota < kappa, got iota={} kappa={kappa}",
                    self.iota
                )));
            }
        }
        if let Some(s) = self.scale_override {
            if !(s > 0.0 && s.is_finite()) {
                return Err(SensError::DegenerateScale);
            }
        }
        Ok(())
    }
}

/// Odd, nondecreasing ψ with truncation at `κ` and inner trimming at `ι`.
///
/// Without truncation this is the soft-threshold `sign(y)·max(0, |y| - ι)`,
/// the `κ → ∞` limit of the truncated form.
pub fn psi_eval(y: f64, cfg: &MStatConfig) -> f64 {
    let a = y.abs();
    let magnitude = match cfg.kappa {
        Some(kappa) => kappa * ((a - cfg.iota) / (kappa - cfg.iota)).clamp(0.0, 1.0),
        None => (a - cfg.iota).max(0.0),
    };
    if y > 0.0 {
        magnitude
    } else if y < 0.0 {
        -magnitude
    } else {
        0.0
    }
}

/// Per-set weights of the difference-in-means statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffMeansWeights {
    /// `w_i = 1`.
    Unit,
    /// `w_i = (n_i - 1) / n_i`.
    SizeRatio,
    /// One weight per matched set.
    Custom(Vec<f64>),
}

/// Choice of additive test statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    DiffMeans(DiffMeansWeights),
    MStat(MStatConfig),
}

impl Default for Statistic {
    fn default() -> Self {
        Statistic::DiffMeans(DiffMeansWeights::Unit)
    }
}

impl Statistic {
    /// Scores for every unit given (imputed) outcomes grouped by set.
    pub fn unit_scores(&self, outcomes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Statistic::DiffMeans(weights) => diff_means_scores(outcomes, weights),
            Statistic::MStat(cfg) => mstat_scores(outcomes, cfg),
        }
    }
}

fn diff_means_scores(outcomes: &[Vec<f64>], weights: &DiffMeansWeights) -> Result<Vec<Vec<f64>>> {
    if let DiffMeansWeights::Custom(w) = weights {
        if w.len() != outcomes.len() {
            return Err(SensError::LengthMismatch {
                expected: outcomes.len(),
                got: w.len(),
            });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(SensError::InvalidParameter("non-finite set weight".into()));
        }
    }
    Ok(outcomes
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let n = y.len() as f64;
            let w = match weights {
                DiffMeansWeights::Unit => 1.0,
                DiffMeansWeights::SizeRatio => (n - 1.0) / n,
                DiffMeansWeights::Custom(w) => w[i],
            };
            let total: f64 = y.iter().sum();
            y.iter().map(|&v| w * (n * v - total) / (n - 1.0)).collect()
        })
        .collect())
}

/// Lower median (index `⌊(m-1)/2⌋` of the sorted values).
fn lower_median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Pooled scale of the m-statistic: the lower median of all within-set
/// absolute pairwise differences, falling back to the nonzero differences
/// when that median is zero. `None` when every difference is zero.
pub fn mstat_scale(outcomes: &[Vec<f64>]) -> Option<f64> {
    let mut diffs = Vec::new();
    for y in outcomes {
        for j in 0..y.len() {
            for l in j + 1..y.len() {
                diffs.push((y[j] - y[l]).abs());
            }
        }
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d > 0.0).collect();
    if nonzero.is_empty() {
        return None;
    }
    match lower_median(diffs) {
        Some(m) if m > 0.0 => Some(m),
        _ => lower_median(nonzero),
    }
}

fn mstat_scores(outcomes: &[Vec<f64>], cfg: &MStatConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let scale = match cfg.scale_override {
        Some(s) => s,
        None => match mstat_scale(outcomes) {
            Some(s) => s,
            // Every within-set difference is zero, so every ψ argument is zero.
            None => return Ok(outcomes.iter().map(|y| vec![0.0; y.len()]).collect()),
        },
    };
    Ok(outcomes
        .iter()
        .map(|y| {
            let n = y.len() as f64;
            y.iter()
                .map(|&yj| y.iter().map(|&yl| psi_eval((yj - yl) / scale, cfg)).sum::<f64>() / n)
                .collect()
        })
        .collect())
}

/// Scores of one matched set with its sorted copy and cumulative sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SetScores {
    scores: Vec<f64>,
    treated: usize,
    sorted: Vec<f64>,
    /// `cum[j] = Σ_{l <= j} sorted[l]`.
    cum: Vec<f64>,
    /// `cum_sq[j] = Σ_{l <= j} sorted[l]²`.
    cum_sq: Vec<f64>,
}

impl SetScores {
    pub fn new(scores: Vec<f64>, treated: usize) -> Self {
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let mut cum = Vec::with_capacity(sorted.len());
        let mut cum_sq = Vec::with_capacity(sorted.len());
        let (mut q, mut s) = (0.0, 0.0);
        for &v in &sorted {
            q += v;
            s += v * v;
            cum.push(q);
            cum_sq.push(s);
        }
        SetScores {
            scores,
            treated,
            sorted,
            cum,
            cum_sq,
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn treated(&self) -> usize {
        self.treated
    }

    pub fn size(&self) -> usize {
        self.scores.len()
    }

    /// Scores in ascending order (stable with respect to input order).
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn cumulative_squares(&self) -> &[f64] {
        &self.cum_sq
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// `max_j q_ij - min_j q_ij`.
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn treated_score(&self) -> f64 {
        self.scores[self.treated]
    }
}

/// Scores of every matched set plus the observed statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    sets: Vec<SetScores>,
    observed: f64,
}

impl ScoreMatrix {
    /// Builds the matrix from raw per-set scores and the observed assignment.
    pub fn from_scores(scores: Vec<Vec<f64>>, assignment: &[usize]) -> Result<Self> {
        if scores.len() != assignment.len() {
            return Err(SensError::LengthMismatch {
                expected: scores.len(),
                got: assignment.len(),
            });
        }
        let mut sets = Vec::with_capacity(scores.len());
        for (i, (q, &a)) in scores.into_iter().zip(assignment).enumerate() {
            if q.len() < 2 {
                return Err(SensError::InvalidParameter(format!(
                    "set {i} has fewer than two scores"
                )));
            }
            if a >= q.len() {
                return Err(SensError::IndexOutOfRange {
                    set: i,
                    index: a,
                    size: q.len(),
                });
            }
            if q.iter().any(|v| !v.is_finite()) {
                return Err(SensError::InvalidParameter(format!(
                    "set {i} has a non-finite score"
                )));
            }
            sets.push(SetScores::new(q, a));
        }
        let observed = sets.iter().map(SetScores::treated_score).sum();
        Ok(ScoreMatrix { sets, observed })
    }

    pub fn sets(&self) -> &[SetScores] {
        &self.sets
    }

    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn is_pair_study(&self) -> bool {
        self.sets.iter().all(|s| s.size() == 2)
    }

    /// Observed value of the statistic, `T_obs`.
    pub fn observed(&self) -> f64 {
        self.observed
    }

    /// `Σ_i q_{i, a_i}` for an arbitrary one-treated-per-set assignment.
    pub fn statistic_value(&self, assignment: &[usize]) -> Result<f64> {
        if assignment.len() != self.sets.len() {
            return Err(SensError::LengthMismatch {
                expected: self.sets.len(),
                got: assignment.len(),
            });
        }
        let mut total = 0.0;
        for (i, (set, &a)) in self.sets.iter().zip(assignment).enumerate() {
            let q = set.scores.get(a).ok_or(SensError::IndexOutOfRange {
                set: i,
                index: a,
                size: set.size(),
            })?;
            total += q;
        }
        Ok(total)
    }
}

/// Scores of `study` under the statistic, treating its outcomes as the
/// imputed control outcomes.
pub fn compute_scores(study: &MatchedStudy, stat: &Statistic) -> Result<ScoreMatrix> {
    let outcomes: Vec<Vec<f64>> = study.sets().iter().map(|s| s.outcomes.clone()).collect();
    let scores = stat.unit_scores(&outcomes)?;
    ScoreMatrix::from_scores(scores, &study.assignment())
}

/// A test statistic `t(z, y)` over one-treated-per-set assignments.
pub trait StatisticFn: Sync {
    /// `z[i]` is the treated unit of set `i`; `y[i]` are the outcomes of set `i`.
    fn evaluate(&self, z: &[usize], y: &[Vec<f64>]) -> f64;
}

impl StatisticFn for Statistic {
    fn evaluate(&self, z: &[usize], y: &[Vec<f64>]) -> f64 {
        // Inputs come from the property generator and are always well formed.
        let q = self.unit_scores(y).expect("statistic scores");
        q.iter().zip(z).map(|(qi, &a)| qi[a]).sum()
    }
}

impl<F> StatisticFn for F
where
    F: Fn(&[usize], &[Vec<f64>]) -> f64 + Sync,
{
    fn evaluate(&self, z: &[usize], y: &[Vec<f64>]) -> f64 {
        self(z, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatProperty {
    /// Increasing in treated outcomes, decreasing in control outcomes.
    EffectIncreasing,
    /// Adding nonnegative shifts to a subset changes the statistic most when
    /// that subset is the treated one.
    DifferentialIncreasing,
}

/// A counterexample found by [`PropertyCheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyWitness {
    pub z: Vec<usize>,
    /// Comparison assignment (differential-increasing only).
    pub a: Option<Vec<usize>>,
    pub y: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    /// Nonpositive control shifts (effect-increasing only).
    pub xi: Option<Vec<Vec<f64>>>,
    /// The side of the inequality that should be the smaller one.
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub property: StatProperty,
    pub trials: usize,
    pub violation: Option<PropertyWitness>,
}

impl PropertyReport {
    pub fn holds(&self) -> bool {
        self.violation.is_none()
    }
}

/// Randomized search for violations of a statistic property on small studies
/// (at most 5 sets of at most 4 units).
#[derive(Debug, Clone, Copy)]
pub struct PropertyCheck {
    pub trials: usize,
    pub seed: u64,
    /// Upper end of the uniform draws for `η` and `-ξ`; zero disables shifts.
    pub perturbation_scale: f64,
}

impl PropertyCheck {
    pub fn new(trials: usize, seed: u64) -> Self {
        PropertyCheck {
            trials: trials.max(1),
            seed,
            perturbation_scale: 3.0,
        }
    }

    pub fn run(&self, stat: &dyn StatisticFn, property: StatProperty) -> PropertyReport {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..self.trials {
            if let Some(w) = self.trial(stat, property, &mut rng) {
                return PropertyReport {
                    property,
                    trials: self.trials,
                    violation: Some(w),
                };
            }
        }
        PropertyReport {
            property,
            trials: self.trials,
            violation: None,
        }
    }

    fn trial(
        &self,
        stat: &dyn StatisticFn,
        property: StatProperty,
        rng: &mut ChaCha8Rng,
    ) -> Option<PropertyWitness> {
        let n_sets = rng.random_range(1..=5);
        let sizes: Vec<usize> = (0..n_sets).map(|_| rng.random_range(2..=4)).collect();
        // Half the trials use integer outcomes so ties are exercised.
        let integer = rng.random_bool(0.5);
        let y: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| {
                        let v: f64 = rng.random_range(-5.0..5.0);
                        if integer {
                            v.round()
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let shift = |rng: &mut ChaCha8Rng| -> f64 {
            if self.perturbation_scale == 0.0 || rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(0.0..self.perturbation_scale)
            }
        };
        let eta: Vec<Vec<f64>> = sizes.iter().map(|&n| (0..n).map(|_| shift(rng)).collect()).collect();
        let z: Vec<usize> = sizes.iter().map(|&n| rng.random_range(0..n)).collect();

        match property {
            StatProperty::EffectIncreasing => {
                let xi: Vec<Vec<f64>> =
                    sizes.iter().map(|&n| (0..n).map(|_| -shift(rng)).collect()).collect();
                let moved: Vec<Vec<f64>> = y
                    .iter()
                    .enumerate()
                    .map(|(i, yi)| {
                        yi.iter()
                            .enumerate()
                            .map(|(j, &v)| if j == z[i] { v + eta[i][j] } else { v + xi[i][j] })
                            .collect()
                    })
                    .collect();
                let before = stat.evaluate(&z, &y);
                let after = stat.evaluate(&z, &moved);
                if after < before - tolerance(&[before, after]) {
                    return Some(PropertyWitness {
                        z,
                        a: None,
                        y,
                        eta,
                        xi: Some(xi),
                        lhs: after,
                        rhs: before,
                    });
                }
            }
            StatProperty::DifferentialIncreasing => {
                let a: Vec<usize> = sizes.iter().map(|&n| rng.random_range(0..n)).collect();
                let moved: Vec<Vec<f64>> = y
                    .iter()
                    .enumerate()
                    .map(|(i, yi)| {
                        yi.iter()
                            .enumerate()
                            .map(|(j, &v)| if j == a[i] { v + eta[i][j] } else { v })
                            .collect()
                    })
                    .collect();
                let lhs = stat.evaluate(&z, &moved) - stat.evaluate(&z, &y);
                let rhs = stat.evaluate(&a, &moved) - stat.evaluate(&a, &y);
                if lhs > rhs + tolerance(&[lhs, rhs]) {
                    return Some(PropertyWitness {
                        z,
                        a: Some(a),
                        y,
                        eta,
                        xi: None,
                        lhs,
                        rhs,
                    });
                }
            }
        }
        None
    }
}

fn tolerance(values: &[f64]) -> f64 {
    1e-9 * (1.0 + values.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Runs [`PropertyCheck`] with its default perturbation scale.
pub fn check_statistic_property(
    stat: &dyn StatisticFn,
    property: StatProperty,
    trials: usize,
    seed: u64,
) -> PropertyReport {
    PropertyCheck::new(trials, seed).run(stat, property)
}
