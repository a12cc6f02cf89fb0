//! Sensitivity analysis for quantiles of hidden biases in matched
//! observational studies.
//!
//! The library takes a matched study, turns it into per-unit scores of an
//! additive test statistic, and inverts worst-case p-values into lower
//! confidence limits for every quantile `Γ*_(k)` of the set-level hidden
//! biases. Matched pairs get a finite-sample analysis ([`pair_exact`]);
//! general matched sets get a Gaussian large-sample analysis
//! ([`set_asymptotic`]).

pub mod error;
pub mod inference;
pub mod model;
pub mod pair_exact;
pub mod rng;
pub mod scores;
pub mod set_asymptotic;
pub mod simulate;
pub mod study;

#[cfg(feature = "oracle")]
pub mod oracle;

pub use error::{Result, SensError};
pub use inference::{
    average_bias_limit, confidence_curve, count_exceeding_limit, lower_confidence_limit, sensitivity_pvalue,
    BiasTransform, ConfidenceCurve, CurveEntry, Engine, EngineConfig, EngineKind, SearchOptions, SearchStatus,
    SensitivityConstraint,
};
pub use model::{assignment_law, SensitivityModelSpec};
pub use pair_exact::{pair_tail_probability, MonteCarlo, TailMethod, TailProbability};
pub use scores::{compute_scores, DiffMeansWeights, MStatConfig, ScoreMatrix, SetScores, Statistic};
pub use set_asymptotic::{asymptotic_pvalue, worst_case_gaussian, ModifiedBounds, PerSetMoments, WorstCaseGaussian};
pub use study::{
    transform_for_null, validate_study, EffectSpec, Gamma, MatchedSet, MatchedStudy, NullKind, RawSet,
};
