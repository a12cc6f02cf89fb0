//! Simulation studies: data generators, assignment sampling under the
//! sensitivity model, type-I error studies and power studies.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SensError};
use crate::inference::{
    average_bias_limit, confidence_curve, sensitivity_pvalue, BiasTransform, Engine, EngineConfig,
    SearchOptions, SensitivityConstraint,
};
use crate::model::{set_probabilities, SensitivityModelSpec};
use crate::pair_exact::{MonteCarlo, TailMethod};
use crate::rng::{derive_seed, substream, DOMAIN_ASSIGNMENT, DOMAIN_POPULATION, DOMAIN_REP_MC};
use crate::scores::{compute_scores, MStatConfig, Statistic};
use crate::study::{Gamma, MatchedSet, MatchedStudy};

/// Law of the control potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OutcomeModel {
    /// i.i.d. `N(0, sd²)`.
    Normal { sd: f64 },
    /// i.i.d. Bernoulli(1/2), except that two random units of every set are
    /// forced to 0 and 1.
    Binary,
}

/// Law of the true hidden biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BiasModel {
    Constant { gamma: f64 },
    /// `max(1, exp(N(log_mean, log_sd²)))`.
    LogNormal { log_mean: f64, log_sd: f64 },
    /// `outlier` on a random `fraction` of sets, `base` elsewhere.
    Outlier { base: f64, outlier: f64, fraction: f64 },
}

/// Effect `c / beta` on every unit of the first `round(beta I)` sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectModel {
    pub c: f64,
    pub beta: f64,
}

impl EffectModel {
    pub const NONE: EffectModel = EffectModel { c: 0.0, beta: 1.0 };
}

/// Engine used to analyse simulated studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SimEngine {
    SetAsymptotic,
    /// Monte-Carlo pair engine with a per-replicate seed.
    PairMonteCarlo { draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n_sets: usize,
    pub set_size: usize,
    pub outcome: OutcomeModel,
    pub bias: BiasModel,
    pub effect: EffectModel,
    pub statistic: Statistic,
    pub engine: SimEngine,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub search: SearchOptions,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SensError::InvalidParameter(m.to_string()));
        if self.n_sets == 0 {
            return bad("a design needs at least one matched set");
        }
        if self.set_size < 2 {
            return bad("matched sets need at least two units");
        }
        if !(self.effect.beta > 0.0 && self.effect.beta <= 1.0) {
            return bad("the affected fraction must lie in (0, 1]");
        }
        if !self.effect.c.is_finite() {
            return bad("the effect size must be finite");
        }
        if self.reps == 0 {
            return bad("a design needs at least one replicate");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        match self.outcome {
            OutcomeModel::Normal { sd } if !(sd > 0.0 && sd.is_finite()) => {
                return bad("the outcome standard deviation must be positive");
            }
            _ => {}
        }
        match self.bias {
            BiasModel::Constant { gamma } => {
                Gamma::new(gamma)?;
            }
            BiasModel::LogNormal { log_mean, log_sd } => {
                if !(log_mean.is_finite() && log_sd > 0.0 && log_sd.is_finite()) {
                    return bad("lognormal parameters must be finite with positive log-sd");
                }
            }
            BiasModel::Outlier {
                base,
                outlier,
                fraction,
            } => {
                Gamma::new(base)?;
                Gamma::new(outlier)?;
                if !(0.0..=1.0).contains(&fraction) {
                    return bad("the outlier fraction must lie in [0, 1]");
                }
            }
        }
        if let SimEngine::PairMonteCarlo { draws } = self.engine {
            if draws == 0 {
                return bad("Monte-Carlo draws must be >= 1");
            }
            if self.set_size != 2 {
                return bad("the pair engine needs set size 2");
            }
        }
        if let Statistic::MStat(cfg) = &self.statistic {
            cfg.validate()?;
        }
        Ok(())
    }

    fn engine_config(&self, rep: usize) -> EngineConfig {
        EngineConfig::new(match self.engine {
            SimEngine::SetAsymptotic => Engine::SetAsymptotic,
            SimEngine::PairMonteCarlo { draws } => Engine::PairExact(TailMethod::MonteCarlo(MonteCarlo::new(
                draws,
                derive_seed(self.seed, DOMAIN_REP_MC, rep as u64),
            ))),
        })
    }
}

/// Potential outcomes, true biases and confounders of one simulated study.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub control: Vec<Vec<f64>>,
    pub treated: Vec<Vec<f64>>,
    pub model: SensitivityModelSpec,
}

impl Population {
    /// True biases sorted ascending; entry `k - 1` is `Γ*_(k)`.
    pub fn sorted_gamma(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self.model.gamma.iter().map(|g| g.value()).collect();
        g.sort_by(f64::total_cmp);
        g
    }
}

fn draw_outcomes(model: OutcomeModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match model {
        OutcomeModel::Normal { sd } => {
            let normal = Normal::new(0.0, sd).expect("validated sd");
            (0..n).map(|_| normal.sample(rng)).collect()
        }
        OutcomeModel::Binary => {
            let coin = Bernoulli::new(0.5).expect("valid probability");
            let mut y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(coin.sample(rng)))).collect();
            let forced = sample(rng, n, 2);
            y[forced.index(0)] = 0.0;
            y[forced.index(1)] = 1.0;
            y
        }
    }
}

fn draw_biases(model: BiasModel, n_sets: usize, rng: &mut ChaCha8Rng) -> Vec<Gamma> {
    let values: Vec<f64> = match model {
        BiasModel::Constant { gamma } => vec![gamma; n_sets],
        BiasModel::LogNormal { log_mean, log_sd } => {
            let law = LogNormal::new(log_mean, log_sd).expect("validated parameters");
            (0..n_sets).map(|_| law.sample(rng).max(1.0)).collect()
        }
        BiasModel::Outlier {
            base,
            outlier,
            fraction,
        } => {
            let count = (fraction * n_sets as f64).round() as usize;
            let mut g = vec![base; n_sets];
            for i in sample(rng, n_sets, count.min(n_sets)) {
                g[i] = outlier;
            }
            g
        }
    };
    values
        .into_iter()
        .map(|v| Gamma::new(v).expect("biases are >= 1"))
        .collect()
}

/// Confounders from min-max rescaled control outcomes; constant sets get 0.
fn rescale(y: &[f64]) -> Vec<f64> {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        y.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; y.len()]
    }
}

/// Potential outcomes, biases and confounders of population `index`.
pub fn generate_study(design: &SimDesign, index: usize) -> Result<Population> {
    design.validate()?;
    let mut rng = substream(design.seed, DOMAIN_POPULATION, index as u64);
    let control: Vec<Vec<f64>> = (0..design.n_sets)
        .map(|_| draw_outcomes(design.outcome, design.set_size, &mut rng))
        .collect();
    let gamma = draw_biases(design.bias, design.n_sets, &mut rng);
    let affected = (design.effect.beta * design.n_sets as f64).round() as usize;
    let shift = design.effect.c / design.effect.beta;
    let treated = control
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let d = if i < affected { shift } else { 0.0 };
            y.iter().map(|&v| v + d).collect()
        })
        .collect();
    let u = control.iter().map(|y| rescale(y)).collect();
    Ok(Population {
        control,
        treated,
        model: SensitivityModelSpec { gamma, u },
    })
}

/// Draws one treated unit per set from the model and reveals the
/// corresponding observed outcomes.
pub fn sample_assignment(pop: &Population, rng: &mut impl Rng) -> Result<MatchedStudy> {
    let sizes: Vec<usize> = pop.control.iter().map(Vec::len).collect();
    pop.model.validate(&sizes)?;
    let sets = pop
        .control
        .iter()
        .enumerate()
        .map(|(i, y0)| {
            let probs = set_probabilities(pop.model.gamma[i], &pop.model.u[i]);
            let draw: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = probs.len() - 1;
            for (j, p) in probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    chosen = j;
                    break;
                }
            }
            // guard against rounding leaving the last unit with zero mass
            while probs[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            let mut y = y0.clone();
            y[chosen] = pop.treated[i][chosen];
            MatchedSet::new(format!("s{i}"), y, chosen)
        })
        .collect();
    MatchedStudy::new(sets)
}

/// Smallest `k` with `k >= fraction · I`, at least 1.
pub fn quantile_k(fraction: f64, n_sets: usize) -> usize {
    ((fraction * n_sets as f64 - 1e-9).ceil() as usize).clamp(1, n_sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ExperimentMode {
    /// p-values at the true bounds on `Γ*_(k)`, `k = ⌈f I⌉`, over assignments
    /// drawn for one fixed population.
    TypeOne { fractions: Vec<f64> },
    /// Confidence curves for each affected fraction `beta` of the effect.
    Power { betas: Vec<f64> },
    /// Confidence curves for m-statistics with each inner trimming value.
    Trimming { kappa: f64, iotas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeOneResult {
    pub fractions: Vec<f64>,
    pub ks: Vec<usize>,
    /// True `Γ*_(k)` for each `k`.
    pub bounds: Vec<f64>,
    /// `pvalues[f][r]`: p-value of replicate `r` for fraction `f`.
    pub pvalues: Vec<Vec<f64>>,
}

impl TypeOneResult {
    /// Share of replicates with p-value at or below `alpha`.
    pub fn rejection_rate(&self, fraction_index: usize, alpha: f64) -> f64 {
        let p = &self.pvalues[fraction_index];
        p.iter().filter(|&&v| v <= alpha).count() as f64 / p.len() as f64
    }

    /// Empirical CDF table: row `r` holds the `r`-th smallest p-value of
    /// every fraction.
    pub fn ecdf_rows(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut header = vec!["rank".to_string(), "ecdf".to_string()];
        header.extend(self.ks.iter().map(|k| format!("p_k{k}")));
        let sorted: Vec<Vec<f64>> = self
            .pvalues
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.sort_by(f64::total_cmp);
                p
            })
            .collect();
        let reps = sorted.first().map_or(0, Vec::len);
        let rows = (0..reps)
            .map(|r| {
                let mut row = vec![(r + 1) as f64, (r + 1) as f64 / reps as f64];
                row.extend(sorted.iter().map(|p| p[r]));
                row
            })
            .collect();
        (header, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStudyResult {
    pub labels: Vec<String>,
    pub n_sets: usize,
    /// `limits[v][r][k - 1]`: limit for `Γ*_(k)` of variant `v`, replicate `r`.
    pub limits: Vec<Vec<Vec<f64>>>,
}

impl CurveStudyResult {
    /// Mean over replicates of the limit for `Γ*_(k)`.
    pub fn mean_limit(&self, variant: usize, k: usize) -> f64 {
        let reps = &self.limits[variant];
        reps.iter().map(|c| c[k - 1]).sum::<f64>() / reps.len() as f64
    }

    /// Mean over replicates of the `g`-averaged limit.
    pub fn mean_average_bias(&self, variant: usize, g: BiasTransform) -> f64 {
        let reps = &self.limits[variant];
        reps.iter()
            .map(|c| crate::inference::average_of_limits(c.iter().copied(), g))
            .sum::<f64>()
            / reps.len() as f64
    }

    /// Rows `k, quantile_fraction, mean limit per variant`.
    pub fn mean_curve_rows(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut header = vec!["k".to_string(), "quantile_fraction".to_string()];
        header.extend(self.labels.iter().cloned());
        let rows = (1..=self.n_sets)
            .map(|k| {
                let mut row = vec![k as f64, k as f64 / self.n_sets as f64];
                row.extend((0..self.labels.len()).map(|v| self.mean_limit(v, k)));
                row
            })
            .collect();
        (header, rows)
    }

    /// Rows of `g`-averaged limits: one per transform, one column per variant.
    pub fn average_bias_rows(&self) -> (Vec<String>, Vec<(String, Vec<f64>)>) {
        let mut header = vec!["g".to_string()];
        header.extend(self.labels.iter().cloned());
        let rows = BiasTransform::ALL
            .iter()
            .map(|&g| {
                (
                    g.name().to_string(),
                    (0..self.labels.len()).map(|v| self.mean_average_bias(v, g)).collect(),
                )
            })
            .collect();
        (header, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExperimentResult {
    TypeOne(TypeOneResult),
    Curves(CurveStudyResult),
}

fn run_type_one(design: &SimDesign, fractions: &[f64]) -> Result<TypeOneResult> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(SensError::InvalidParameter("quantile fractions must lie in (0, 1]".into()));
    }
    let pop = generate_study(design, 0)?;
    let sorted = pop.sorted_gamma();
    let ks: Vec<usize> = fractions.iter().map(|&f| quantile_k(f, design.n_sets)).collect();
    let bounds: Vec<f64> = ks.iter().map(|&k| sorted[k - 1]).collect();
    let per_rep: Vec<Vec<f64>> = (0..design.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(design.seed, DOMAIN_ASSIGNMENT, r as u64);
            let study = sample_assignment(&pop, &mut rng)?;
            let scores = compute_scores(&study, &design.statistic)?;
            let cfg = design.engine_config(r);
            ks.iter()
                .zip(&bounds)
                .map(|(&k, &b)| {
                    let constraint = SensitivityConstraint::Quantile {
                        k,
                        gamma0: Gamma::new(b)?,
                    };
                    sensitivity_pvalue(&scores, &constraint, &cfg)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let pvalues = (0..ks.len())
        .map(|f| per_rep.iter().map(|p| p[f]).collect())
        .collect();
    Ok(TypeOneResult {
        fractions: fractions.to_vec(),
        ks,
        bounds,
        pvalues,
    })
}

fn curve_limits(design: &SimDesign, study: &MatchedStudy, stat: &Statistic, rep: usize) -> Result<Vec<f64>> {
    let scores = compute_scores(study, stat)?;
    let curve = confidence_curve(&scores, design.alpha, &design.engine_config(rep), &design.search, None)?;
    Ok(curve.entries.iter().map(|e| e.lower_limit).collect())
}

fn run_power(design: &SimDesign, betas: &[f64]) -> Result<CurveStudyResult> {
    let mut limits = Vec::with_capacity(betas.len());
    for &beta in betas {
        let variant = SimDesign {
            effect: EffectModel { beta, ..design.effect },
            ..design.clone()
        };
        variant.validate()?;
        let reps = (0..design.reps)
            .into_par_iter()
            .map(|r| {
                let pop = generate_study(&variant, r)?;
                let mut rng = substream(design.seed, DOMAIN_ASSIGNMENT, r as u64);
                let study = sample_assignment(&pop, &mut rng)?;
                curve_limits(&variant, &study, &variant.statistic, r)
            })
            .collect::<Result<Vec<_>>>()?;
        limits.push(reps);
    }
    Ok(CurveStudyResult {
        labels: betas.iter().map(|b| format!("beta_{b}")).collect(),
        n_sets: design.n_sets,
        limits,
    })
}

fn run_trimming(design: &SimDesign, kappa: f64, iotas: &[f64]) -> Result<CurveStudyResult> {
    let stats = iotas
        .iter()
        .map(|&iota| MStatConfig::new(Some(kappa), iota).map(Statistic::MStat))
        .collect::<Result<Vec<_>>>()?;
    let per_rep = (0..design.reps)
        .into_par_iter()
        .map(|r| {
            let pop = generate_study(design, r)?;
            let mut rng = substream(design.seed, DOMAIN_ASSIGNMENT, r as u64);
            let study = sample_assignment(&pop, &mut rng)?;
            stats
                .iter()
                .map(|s| curve_limits(design, &study, s, r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let limits = (0..iotas.len())
        .map(|v| per_rep.iter().map(|rep| rep[v].clone()).collect())
        .collect();
    Ok(CurveStudyResult {
        labels: iotas.iter().map(|i| format!("iota_{i}")).collect(),
        n_sets: design.n_sets,
        limits,
    })
}

/// Runs a simulation study.
///
/// Type-I studies keep one population fixed and redraw assignments; curve
/// studies redraw the population and the assignment for every replicate.
pub fn run_experiment(design: &SimDesign, mode: &ExperimentMode) -> Result<ExperimentResult> {
    design.validate()?;
    match mode {
        ExperimentMode::TypeOne { fractions } => run_type_one(design, fractions).map(ExperimentResult::TypeOne),
        ExperimentMode::Power { betas } => run_power(design, betas).map(ExperimentResult::Curves),
        ExperimentMode::Trimming { kappa, iotas } => {
            run_trimming(design, *kappa, iotas).map(ExperimentResult::Curves)
        }
    }
}

/// Mean over replicates of `g`-averaged limits, from curves computed
/// elsewhere.
pub fn mean_average_bias(curves: &[crate::inference::ConfidenceCurve], g: BiasTransform) -> f64 {
    curves.iter().map(|c| average_bias_limit(c, g)).sum::<f64>() / curves.len() as f64
}
