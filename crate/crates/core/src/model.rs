//! The sensitivity model: within-set treatment probabilities driven by a
//! hidden-bias bound `Γ_i` and unit-level confounders `u_ij ∈ [0, 1]`.

use crate::error::{Result, SensError};
use crate::study::Gamma;

/// Biases and confounder values defining one assignment law.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityModelSpec {
    /// One bound per matched set.
    pub gamma: Vec<Gamma>,
    /// Confounder values grouped by set.
    pub u: Vec<Vec<f64>>,
}

impl SensitivityModelSpec {
    pub fn validate(&self, sizes: &[usize]) -> Result<()> {
        if self.gamma.len() != sizes.len() {
            return Err(SensError::LengthMismatch {
                expected: sizes.len(),
                got: self.gamma.len(),
            });
        }
        if self.u.len() != sizes.len() {
            return Err(SensError::LengthMismatch {
                expected: sizes.len(),
                got: self.u.len(),
            });
        }
        for (row, &n) in self.u.iter().zip(sizes) {
            if row.len() != n {
                return Err(SensError::LengthMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(SensError::InvalidParameter(
                    "confounder values must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Treatment probabilities of one set: `exp(γ u_j) / Σ_l exp(γ u_l)`.
///
/// An unbounded `Γ` puts all mass on the units with the largest `u`, split
/// evenly among ties.
pub fn set_probabilities(gamma: Gamma, u: &[f64]) -> Vec<f64> {
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if gamma.is_unbounded() {
        let top = u.iter().filter(|&&v| v == u_max).count() as f64;
        return u.iter().map(|&v| if v == u_max { 1.0 / top } else { 0.0 }).collect();
    }
    let log_gamma = gamma.value().ln();
    // shift by the maximum for numerical stability
    let weights: Vec<f64> = u.iter().map(|&v| (log_gamma * (v - u_max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Per-set categorical treatment probabilities under the model.
pub fn assignment_law(sizes: &[usize], spec: &SensitivityModelSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate(sizes)?;
    Ok(spec
        .gamma
        .iter()
        .zip(&spec.u)
        .map(|(&g, u)| set_probabilities(g, u))
        .collect())
}
