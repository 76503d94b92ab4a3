//! Confidence-EI acquisition and top-n batch selection over a grid
//! realization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::GridRealization;
use crate::stats::median;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcquisitionError {
    #[error("cannot derive a confidence from an empty batch")]
    EmptyBatch,
    #[error("batch of {requested} points requested from a grid of {available} cells")]
    BatchTooLarge { requested: usize, available: usize },
    #[error("invalid acquisition config: {0}")]
    InvalidConfig(String),
}

/// Which value plays the role of the incumbent `f(x⁺)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncumbentMode {
    /// Largest response signal observed so far.
    #[default]
    ObservedMax,
    /// Largest surrogate mean over the evaluated proposal locations.
    SurrogateMeanMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    /// ξ at zero confidence.
    pub xi_max: f64,
    /// Confidence at which ξ reaches zero.
    pub confidence_ref: f64,
    pub incumbent: IncumbentMode,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            xi_max: 0.2,
            confidence_ref: 0.8,
            incumbent: IncumbentMode::ObservedMax,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if !(self.xi_max >= 0.0 && self.xi_max.is_finite()) {
            return Err(AcquisitionError::InvalidConfig(format!("xi_max = {}", self.xi_max)));
        }
        if !(self.confidence_ref > 0.0 && self.confidence_ref.is_finite()) {
            return Err(AcquisitionError::InvalidConfig(format!(
                "confidence_ref = {}",
                self.confidence_ref
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Confidence-EI: `(μ − f⁺ − ξ)Φ(Z) + σφ(Z)` with `Z = (μ − f⁺ − ξ)/σ`.
/// At `σ = 0` this is the limit `max(μ − f⁺ − ξ, 0)`.
pub fn cei(mu: f64, sigma: f64, incumbent: f64, xi: f64) -> f64 {
    let improvement = mu - incumbent - xi;
    if sigma <= 0.0 {
        return improvement.max(0.0);
    }
    let z = improvement / sigma;
    (improvement * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(0.0)
}

/// ξ from the median response of the current batch: `ξ_max (1 − clamp(c / c_ref, 0, 1))`.
pub fn dynamic_xi(batch_responses: &[f64], cfg: &AcquisitionConfig) -> Result<f64, AcquisitionError> {
    let confidence = median(batch_responses).ok_or(AcquisitionError::EmptyBatch)?;
    Ok(cfg.xi_max * (1.0 - (confidence / cfg.confidence_ref).clamp(0.0, 1.0)))
}

/// CEI score for every grid cell, row-major.
pub fn score_grid(realization: &GridRealization, incumbent: f64, xi: f64) -> Vec<f64> {
    realization
        .mean
        .par_iter()
        .zip(realization.stddev.par_iter())
        .map(|(&m, &s)| cei(m, s, incumbent, xi))
        .collect()
}

/// The `n` cells with the largest CEI, best first. Equal scores are ordered
/// by row-major cell index.
pub fn select_batch(
    realization: &GridRealization,
    incumbent: f64,
    xi: f64,
    n: usize,
) -> Result<Vec<usize>, AcquisitionError> {
    let scores = score_grid(realization, incumbent, xi);
    top_n(&scores, n)
}

pub(crate) fn top_n(scores: &[f64], n: usize) -> Result<Vec<usize>, AcquisitionError> {
    if n > scores.len() {
        return Err(AcquisitionError::BatchTooLarge {
            requested: n,
            available: scores.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, order);
        idx.truncate(n);
    }
    idx.sort_unstable_by(order);
    Ok(idx)
}
