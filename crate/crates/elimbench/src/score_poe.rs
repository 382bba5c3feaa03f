//! Score-based elimination baseline: discard every choice whose probability
//! is strictly below the mean of the label distribution.
//!
//! On 2-choice questions this rule is always consistent with picking the
//! argmax: whichever label has the larger mass, the other falls strictly
//! below the mean, so the baseline carries no signal there. The property
//! tests pin that argument down.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("probabilities must be finite and non-negative ({label}: {value})")]
    NegativeMass { label: char, value: f64 },
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("weights sum to {0}; cannot normalize")]
    DegenerateWeights(f64),
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("elimination needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
}

const SUM_TOLERANCE: f64 = 1e-9;

/// A probability distribution over answer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    probs: BTreeMap<char, f64>,
}

impl LabelDistribution {
    /// Accepts an already-normalized distribution (sum within 1e-9 of 1).
    pub fn new(probs: BTreeMap<char, f64>) -> Result<Self, ScoreError> {
        for (&label, &value) in &probs {
            if !value.is_finite() || value < 0.0 {
                return Err(ScoreError::NegativeMass { label, value });
            }
        }
        let total: f64 = probs.values().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(ScoreError::NotNormalized(total));
        }
        Ok(LabelDistribution { probs })
    }

    /// Normalizes raw non-negative weights.
    pub fn from_weights(weights: &BTreeMap<char, f64>) -> Result<Self, ScoreError> {
        for (&label, &value) in weights {
            if !value.is_finite() || value < 0.0 {
                return Err(ScoreError::NegativeMass { label, value });
            }
        }
        let total: f64 = weights.values().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(ScoreError::DegenerateWeights(total));
        }
        let probs = weights.iter().map(|(&l, &w)| (l, w / total)).collect();
        Ok(LabelDistribution { probs })
    }

    pub fn probs(&self) -> &BTreeMap<char, f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Labels whose probability is strictly below the mean probability. The
/// maximum is never strictly below the mean, so the result is never the
/// whole label set; exact ties eliminate nothing.
pub fn below_average_eliminate(d: &LabelDistribution) -> Result<BTreeSet<char>, ScoreError> {
    if d.len() < 2 {
        return Err(ScoreError::TooFewLabels(d.len()));
    }
    let mean = d.probs.values().sum::<f64>() / d.len() as f64;
    let eliminated: BTreeSet<char> = d
        .probs
        .iter()
        .filter(|(_, &p)| p < mean)
        .map(|(&l, _)| l)
        .collect();
    debug_assert!(eliminated.len() < d.len(), "cannot eliminate every label");
    Ok(eliminated)
}

/// Label of maximal probability; ties break alphabetically.
pub fn argmax_select(d: &LabelDistribution) -> Result<char, ScoreError> {
    let mut best: Option<(char, f64)> = None;
    for (&label, &p) in &d.probs {
        match best {
            Some((_, bp)) if p <= bp => {}
            _ => best = Some((label, p)),
        }
    }
    best.map(|(l, _)| l).ok_or(ScoreError::EmptyDistribution)
}
