//! Test inversion: lower confidence limits for every quantile of the hidden
//! biases, exceedance counts, and average-bias summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SensError};
use crate::pair_exact::{pair_tail_probability, TailMethod};
use crate::scores::ScoreMatrix;
use crate::set_asymptotic::{asymptotic_pvalue, modified_pvalue, worst_case_gaussian, ModifiedBounds};
use crate::study::Gamma;

/// A bound on the hidden biases of the matched sets.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitivityConstraint {
    /// `Γ*_i <= Γ_i` for every set.
    Vector(Vec<Gamma>),
    /// `Γ*_(k) <= Γ_0`: at most `I - k` sets exceed `Γ_0`.
    Quantile { k: usize, gamma0: Gamma },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    /// Finite-sample analysis for matched pairs.
    PairExact(TailMethod),
    /// Gaussian approximation for general matched sets.
    SetAsymptotic,
}

impl Engine {
    pub fn kind(&self) -> EngineKind {
        match self {
            Engine::PairExact(_) => EngineKind::PairExact,
            Engine::SetAsymptotic => EngineKind::SetAsymptotic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    PairExact,
    SetAsymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub engine: Engine,
    pub bounds: ModifiedBounds,
}

impl EngineConfig {
    pub fn new(engine: Engine) -> Self {
        EngineConfig {
            engine,
            bounds: ModifiedBounds::default(),
        }
    }

    /// Checks that the engine can analyse the study.
    pub fn check(&self, scores: &ScoreMatrix) -> Result<()> {
        match self.engine {
            Engine::PairExact(_) => {
                if let Some(i) = scores.sets().iter().position(|s| s.size() != 2) {
                    return Err(SensError::EngineMismatch(format!(
                        "the pair engine needs every set to be a pair, set {i} has {} units",
                        scores.sets()[i].size()
                    )));
                }
            }
            Engine::SetAsymptotic => {
                if scores.n_sets() < 2 {
                    return Err(SensError::EngineMismatch(
                        "the asymptotic engine needs at least two matched sets".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Upper bound on the p-value of the null hypothesis under `constraint`.
pub fn sensitivity_pvalue(
    scores: &ScoreMatrix,
    constraint: &SensitivityConstraint,
    cfg: &EngineConfig,
) -> Result<f64> {
    cfg.check(scores)?;
    if let SensitivityConstraint::Quantile { k, gamma0 } = constraint {
        if *k == 0 || *k > scores.n_sets() {
            return Err(SensError::KOutOfRange {
                k: *k,
                n_sets: scores.n_sets(),
            });
        }
        if gamma0.is_unbounded() {
            return Ok(1.0);
        }
    }
    let p = match &cfg.engine {
        Engine::PairExact(method) => pair_tail_probability(scores, constraint, method)?.p,
        Engine::SetAsymptotic => {
            let law = worst_case_gaussian(scores, constraint)?;
            asymptotic_pvalue(scores.observed(), &law)
        }
    };
    Ok(match constraint {
        SensitivityConstraint::Quantile { k, gamma0 } => modified_pvalue(p, *gamma0, *k, &cfg.bounds),
        SensitivityConstraint::Vector(_) => p,
    })
}

/// Settings of the bracketing search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Absolute width at which bisection stops.
    pub tol: f64,
    /// Largest bias the search considers.
    pub bracket_cap: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            tol: 1e-4,
            bracket_cap: 1e6,
        }
    }
}

impl SearchOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SensError::InvalidParameter("tolerance must be positive".into()));
        }
        if !(self.bracket_cap >= 2.0 && self.bracket_cap.is_finite()) {
            return Err(SensError::InvalidParameter("bracket cap must be finite and >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Converged,
    /// The p-value stayed at or below alpha up to the bracket cap.
    BracketCapped,
    /// The p-value exceeds alpha already at `Γ_0 = 1`.
    Noninformative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub k: usize,
    pub quantile_fraction: f64,
    pub lower_limit: f64,
    pub achieved_p: f64,
    pub status: SearchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    pub alpha: f64,
    pub engine: EngineKind,
    /// Monte-Carlo seed and draws, when the engine uses them.
    pub seed: Option<u64>,
    pub draws: Option<usize>,
    pub tolerance: f64,
    pub n_sets: usize,
    /// Entries in ascending `k`.
    pub entries: Vec<CurveEntry>,
}

struct Search<'a> {
    scores: &'a ScoreMatrix,
    cfg: &'a EngineConfig,
    alpha: f64,
    opts: SearchOptions,
    k: usize,
}

impl Search<'_> {
    fn p(&self, gamma0: f64) -> Result<f64> {
        let constraint = SensitivityConstraint::Quantile {
            k: self.k,
            gamma0: Gamma::new(gamma0)?,
        };
        sensitivity_pvalue(self.scores, &constraint, self.cfg)
    }

    fn entry(&self, lower_limit: f64, achieved_p: f64, status: SearchStatus) -> CurveEntry {
        CurveEntry {
            k: self.k,
            quantile_fraction: self.k as f64 / self.scores.n_sets() as f64,
            lower_limit,
            achieved_p,
            status,
        }
    }

    /// Bisects `[lo, hi]` where `p(lo) <= alpha < p(hi)`, returning the lower
    /// endpoint of the final bracket.
    fn bisect(&self, mut lo: f64, mut p_lo: f64, mut hi: f64) -> Result<CurveEntry> {
        while hi - lo > self.opts.tol {
            let mid = 0.5 * (lo + hi);
            let p = self.p(mid)?;
            if p <= self.alpha {
                lo = mid;
                p_lo = p;
            } else {
                hi = mid;
            }
        }
        Ok(self.entry(lo, p_lo, SearchStatus::Converged))
    }

    /// Doubling from 2 until the p-value exceeds alpha or the cap is hit.
    fn open_search(&self, p_one: f64) -> Result<CurveEntry> {
        let cap = self.opts.bracket_cap;
        let (mut lo, mut p_lo) = (1.0, p_one);
        let mut g = 2.0;
        while g < cap {
            let p = self.p(g)?;
            if p > self.alpha {
                return self.bisect(lo, p_lo, g);
            }
            lo = g;
            p_lo = p;
            g *= 2.0;
        }
        let p_cap = self.p(cap)?;
        if p_cap <= self.alpha {
            Ok(self.entry(cap, p_cap, SearchStatus::BracketCapped))
        } else {
            self.bisect(lo, p_lo, cap)
        }
    }

    fn run(&self, previous: Option<&CurveEntry>) -> Result<CurveEntry> {
        let p_one = self.p(1.0)?;
        if p_one > self.alpha {
            return Ok(self.entry(1.0, p_one, SearchStatus::Noninformative));
        }
        match previous {
            Some(prev) if prev.status != SearchStatus::BracketCapped && prev.lower_limit > 1.0 => {
                let p_prev = self.p(prev.lower_limit)?;
                if p_prev <= self.alpha {
                    Ok(self.entry(prev.lower_limit, p_prev, SearchStatus::Converged))
                } else {
                    self.bisect(1.0, p_one, prev.lower_limit)
                }
            }
            Some(prev) if prev.status != SearchStatus::BracketCapped => {
                Ok(self.entry(1.0, p_one, SearchStatus::Converged))
            }
            _ => self.open_search(p_one),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(SensError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Lower confidence limit for `Γ*_(k)`: the largest searched `Γ_0` whose
/// p-value stays at or below `alpha`.
pub fn lower_confidence_limit(
    scores: &ScoreMatrix,
    k: usize,
    alpha: f64,
    cfg: &EngineConfig,
    opts: &SearchOptions,
) -> Result<CurveEntry> {
    check_alpha(alpha)?;
    opts.validate()?;
    cfg.check(scores)?;
    if k == 0 || k > scores.n_sets() {
        return Err(SensError::KOutOfRange {
            k,
            n_sets: scores.n_sets(),
        });
    }
    Search {
        scores,
        cfg,
        alpha,
        opts: *opts,
        k,
    }
    .run(None)
}

/// Limits for every `k` (or those in `k_grid`), searched from the largest
/// `k` down with each limit bounding the next search from above.
pub fn confidence_curve(
    scores: &ScoreMatrix,
    alpha: f64,
    cfg: &EngineConfig,
    opts: &SearchOptions,
    k_grid: Option<&[usize]>,
) -> Result<ConfidenceCurve> {
    check_alpha(alpha)?;
    opts.validate()?;
    cfg.check(scores)?;
    let n = scores.n_sets();
    let mut ks: Vec<usize> = match k_grid {
        Some(grid) => grid.to_vec(),
        None => (1..=n).collect(),
    };
    ks.sort_unstable();
    ks.dedup();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(SensError::KOutOfRange { k, n_sets: n });
    }
    let mut entries: Vec<CurveEntry> = Vec::with_capacity(ks.len());
    for &k in ks.iter().rev() {
        let search = Search {
            scores,
            cfg,
            alpha,
            opts: *opts,
            k,
        };
        let entry = search.run(entries.last())?;
        entries.push(entry);
    }
    entries.reverse();
    let (seed, draws) = match cfg.engine {
        Engine::PairExact(TailMethod::MonteCarlo(mc)) => (Some(mc.seed), Some(mc.draws)),
        _ => (None, None),
    };
    Ok(ConfidenceCurve {
        alpha,
        engine: cfg.engine.kind(),
        seed,
        draws,
        tolerance: opts.tol,
        n_sets: n,
        entries,
    })
}

/// `#{k : Γ̂_(k) > Γ_0}`, a lower confidence limit for the number of sets
/// whose hidden bias exceeds `Γ_0`.
pub fn count_exceeding_limit(curve: &ConfidenceCurve, gamma0: f64) -> usize {
    curve
        .entries
        .iter()
        .filter(|e| e.lower_limit > gamma0)
        .count()
}

/// Transformation applied before averaging limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasTransform {
    Identity,
    Log,
    /// `x / (1 + x)`.
    Odds,
}

impl BiasTransform {
    pub const ALL: [BiasTransform; 3] = [BiasTransform::Identity, BiasTransform::Log, BiasTransform::Odds];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            BiasTransform::Identity => x,
            BiasTransform::Log => x.ln(),
            BiasTransform::Odds => x / (1.0 + x),
        }
    }

    pub fn invert(self, m: f64) -> f64 {
        match self {
            BiasTransform::Identity => m,
            BiasTransform::Log => m.exp(),
            BiasTransform::Odds => m / (1.0 - m),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BiasTransform::Identity => "identity",
            BiasTransform::Log => "log",
            BiasTransform::Odds => "odds",
        }
    }
}

/// `g⁻¹(mean of g(Γ̂_(k)))` over the curve's entries.
///
/// Meant for full curves; on a thinned curve it averages the emitted
/// entries only.
pub fn average_bias_limit(curve: &ConfidenceCurve, g: BiasTransform) -> f64 {
    average_of_limits(curve.entries.iter().map(|e| e.lower_limit), g)
}

/// `g⁻¹(mean of g(x))` for a list of limits.
pub fn average_of_limits(limits: impl IntoIterator<Item = f64>, g: BiasTransform) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in limits {
        sum += g.apply(x);
        n += 1;
    }
    g.invert(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair_exact::MonteCarlo;

    fn sign_study(n: usize) -> ScoreMatrix {
        ScoreMatrix::from_scores(vec![vec![1.0, 0.0]; n], &vec![0; n]).unwrap()
    }

    fn exact() -> EngineConfig {
        EngineConfig::new(Engine::PairExact(TailMethod::ExactDp))
    }

    fn curve_of(limits: &[f64]) -> ConfidenceCurve {
        ConfidenceCurve {
            alpha: 0.05,
            engine: EngineKind::PairExact,
            seed: None,
            draws: None,
            tolerance: 1e-4,
            n_sets: limits.len(),
            entries: limits
                .iter()
                .enumerate()
                .map(|(i, &l)| CurveEntry {
                    k: i + 1,
                    quantile_fraction: (i + 1) as f64 / limits.len() as f64,
                    lower_limit: l,
                    achieved_p: 0.0,
                    status: SearchStatus::Converged,
                })
                .collect(),
        }
    }

    #[test]
    fn pvalue_examples() {
        let m = sign_study(5);
        let q = |k, g: f64| SensitivityConstraint::Quantile {
            k,
            gamma0: Gamma::new(g).unwrap(),
        };
        assert_eq!(sensitivity_pvalue(&m, &q(5, 1.0), &exact()).unwrap(), 0.03125);
        assert_eq!(sensitivity_pvalue(&m, &q(3, 1.0), &exact()).unwrap(), 0.125);
        let unb = SensitivityConstraint::Quantile {
            k: 2,
            gamma0: Gamma::UNBOUNDED,
        };
        assert_eq!(sensitivity_pvalue(&m, &unb, &exact()).unwrap(), 1.0);
        let sets = ScoreMatrix::from_scores(vec![vec![1.0, 0.0, 0.0]; 3], &[0, 0, 0]).unwrap();
        assert!(matches!(
            sensitivity_pvalue(&sets, &q(3, 1.0), &exact()),
            Err(SensError::EngineMismatch(_))
        ));
        let one = ScoreMatrix::from_scores(vec![vec![1.0, 0.0, 0.0]], &[0]).unwrap();
        let asym = EngineConfig::new(Engine::SetAsymptotic);
        assert!(matches!(
            sensitivity_pvalue(&one, &q(1, 1.0), &asym),
            Err(SensError::EngineMismatch(_))
        ));
    }

    #[test]
    fn sign_study_limits() {
        let m = sign_study(5);
        let opts = SearchOptions::default();
        let e = lower_confidence_limit(&m, 5, 0.05, &exact(), &opts).unwrap();
        // (Γ/(1+Γ))^5 = 0.05
        let r = 0.05_f64.powf(0.2);
        let truth = r / (1.0 - r);
        assert_eq!(e.status, SearchStatus::Converged);
        assert!((e.lower_limit - truth).abs() < 1e-3, "{}", e.lower_limit);
        assert!(e.lower_limit <= truth && e.achieved_p <= 0.05);
        let e = lower_confidence_limit(&m, 3, 0.05, &exact(), &opts).unwrap();
        assert_eq!(e.status, SearchStatus::Noninformative);
        assert_eq!(e.lower_limit, 1.0);
        assert_eq!(e.achieved_p, 0.125);
    }

    #[test]
    fn capped_search() {
        let m = sign_study(40);
        let e = lower_confidence_limit(
            &m,
            40,
            0.05,
            &EngineConfig::new(Engine::SetAsymptotic),
            &SearchOptions {
                tol: 1e-4,
                bracket_cap: 4.0,
            },
        )
        .unwrap();
        // z = sqrt(40 / Γ), still above 3 at the cap
        assert_eq!(e.status, SearchStatus::BracketCapped);
        assert_eq!(e.lower_limit, 4.0);
        assert!(e.achieved_p <= 0.05);
    }

    #[test]
    fn curve_is_nested_and_consistent() {
        let scores: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let d = 0.5 + ((i * 7) % 11) as f64 / 4.0;
                vec![d, -d]
            })
            .collect();
        let m = ScoreMatrix::from_scores(scores, &vec![0; 30]).unwrap();
        let cfg = EngineConfig::new(Engine::PairExact(TailMethod::MonteCarlo(MonteCarlo::new(2000, 5))));
        let opts = SearchOptions { tol: 1e-3, ..Default::default() };
        let curve = confidence_curve(&m, 0.05, &cfg, &opts, None).unwrap();
        assert_eq!(curve.entries.len(), 30);
        for w in curve.entries.windows(2) {
            assert!(w[0].lower_limit <= w[1].lower_limit);
        }
        let top = lower_confidence_limit(&m, 30, 0.05, &cfg, &opts).unwrap();
        assert_eq!(&top, curve.entries.last().unwrap());
        for e in &curve.entries {
            assert!(e.achieved_p <= 0.05 || e.status == SearchStatus::Noninformative);
        }
    }

    #[test]
    fn counting_examples() {
        let c = curve_of(&[1.0, 1.0, 2.0, 3.0, 5.0]);
        assert_eq!(count_exceeding_limit(&c, 2.5), 2);
        assert_eq!(count_exceeding_limit(&c, 5.0), 0);
        let c = curve_of(&[1.5, 2.0, 3.0]);
        assert_eq!(count_exceeding_limit(&c, 1.0), 3);
    }

    #[test]
    fn averaging_examples() {
        let c = curve_of(&[1.0, 1.0, 2.0, 3.0, 5.0]);
        assert!((average_bias_limit(&c, BiasTransform::Identity) - 2.4).abs() < 1e-12);
        let flat = curve_of(&[3.7; 4]);
        for g in BiasTransform::ALL {
            assert!((average_bias_limit(&flat, g) - 3.7).abs() < 1e-12);
        }
        let c = curve_of(&[1.0, 4.0]);
        assert!((average_bias_limit(&c, BiasTransform::Odds) - 0.65 / 0.35).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = sign_study(5);
        let opts = SearchOptions::default();
        assert!(lower_confidence_limit(&m, 5, 1.0, &exact(), &opts).is_err());
        assert!(lower_confidence_limit(&m, 6, 0.05, &exact(), &opts).is_err());
        assert!(confidence_curve(&m, 0.05, &exact(), &opts, Some(&[0, 2])).is_err());
    }
}
