//! Accuracy, strategy-difference significance, cross-strategy agreement, and
//! self-consistency.
//!
//! The significance test is a two-sample unpooled (Welch) t-test on the 0/1
//! correctness vectors, with the two-sided p-value taken from the Student-t
//! distribution at Welch-Satterthwaite degrees of freedom. Parse failures
//! count as incorrect for accuracy and as disagreements for consistency;
//! the effect is auditable through each run's parse-failure rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Question;
use crate::parsing::Prediction;
use crate::prompting::Strategy;
use crate::stats::student_t_two_sided_p;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty prediction list")]
    Empty,
    #[error("need at least 2 observations per sample, got {0} and {1}")]
    DegenerateSize(usize, usize),
    #[error("prediction references unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("agreement is defined for 2-choice questions; `{id}` has {n}")]
    NotTwoChoice { id: String, n: usize },
    #[error("prediction for `{got}` paired with question `{want}`")]
    QuestionMismatch { got: String, want: String },
    #[error("runs cover different question ids (first difference: `{0}`)")]
    IdMismatch(String),
}

/// Questions addressable by id.
pub type QuestionIndex = BTreeMap<String, Question>;

pub fn question_index(questions: &[Question]) -> QuestionIndex {
    questions.iter().map(|q| (q.id.clone(), q.clone())).collect()
}

/// Whether one prediction counts as a success: the direct strategy must name
/// the gold, the elimination strategy must discard a non-gold choice, and a
/// parse failure is always a failure.
pub fn is_correct(pred: &Prediction, q: &Question) -> bool {
    match (pred.parse_status, pred.chosen_label) {
        (crate::parsing::ParseStatus::Ok, Some(label)) => match pred.strategy {
            Strategy::DirectAnswer => label == q.gold_label,
            Strategy::ProcessOfElimination => label != q.gold_label,
        },
        _ => false,
    }
}

/// Fraction of predictions that count as successes.
pub fn accuracy(preds: &[Prediction], questions: &QuestionIndex) -> Result<f64, MetricsError> {
    let vec = CorrectnessVector::from_predictions(preds, questions)?;
    Ok(vec.accuracy())
}

/// Per-question 0/1 correctness, ordered by question id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessVector {
    values: Vec<bool>,
}

impl CorrectnessVector {
    pub fn new(values: Vec<bool>) -> Self {
        CorrectnessVector { values }
    }

    /// A vector with `correct` successes out of `total`, as published
    /// proportions are reconstructed for significance checks.
    pub fn from_counts(correct: usize, total: usize) -> Self {
        assert!(correct <= total, "correct exceeds total");
        let mut values = vec![true; correct];
        values.extend(std::iter::repeat_n(false, total - correct));
        CorrectnessVector { values }
    }

    pub fn from_predictions(
        preds: &[Prediction],
        questions: &QuestionIndex,
    ) -> Result<Self, MetricsError> {
        if preds.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut sorted: Vec<&Prediction> = preds.iter().collect();
        sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let values = sorted
            .into_iter()
            .map(|p| {
                questions
                    .get(&p.question_id)
                    .map(|q| is_correct(p, q))
                    .ok_or_else(|| MetricsError::UnknownQuestion(p.question_id.clone()))
            })
            .collect::<Result<Vec<bool>, _>>()?;
        Ok(CorrectnessVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        assert!(!self.values.is_empty(), "accuracy of an empty vector");
        self.values.iter().filter(|&&v| v).count() as f64 / self.values.len() as f64
    }

    fn mean_var(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.accuracy();
        let ss: f64 = self
            .values
            .iter()
            .map(|&v| {
                let x = if v { 1.0 } else { 0.0 };
                (x - mean) * (x - mean)
            })
            .sum();
        (mean, ss / (n - 1.0))
    }
}

/// Accuracy comparison of two runs with significance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_a: usize,
    pub n_b: usize,
    pub acc_a: f64,
    pub acc_b: f64,
    /// Exactly `acc_a - acc_b`.
    pub diff: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch two-sample t-test on the 0/1 correctness vectors, two-sided.
/// Zero variance in both samples with equal means is defined as `p = 1`.
pub fn diff_t_test(
    a: &CorrectnessVector,
    b: &CorrectnessVector,
) -> Result<MetricsReport, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::DegenerateSize(a.len(), b.len()));
    }
    let (mean_a, var_a) = a.mean_var();
    let (mean_b, var_b) = b.mean_var();
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let diff = mean_a - mean_b;
    let se2 = var_a / na + var_b / nb;

    let (t_stat, df, p_value) = if se2 == 0.0 {
        if diff == 0.0 {
            (0.0, na + nb - 2.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, na + nb - 2.0, 0.0)
        }
    } else {
        let t = diff / se2.sqrt();
        let df = se2 * se2
            / ((var_a / na) * (var_a / na) / (na - 1.0)
                + (var_b / nb) * (var_b / nb) / (nb - 1.0));
        (t, df, student_t_two_sided_p(t, df))
    };

    Ok(MetricsReport {
        n_a: a.len(),
        n_b: b.len(),
        acc_a: mean_a,
        acc_b: mean_b,
        diff,
        t_stat,
        df,
        p_value,
    })
}

/// Whether a direct-answer/elimination pair is logically consistent on a
/// 2-choice question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Agree,
    Disagree,
}

/// The pair agrees iff both parses succeeded and the elimination discarded
/// the choice the direct strategy did not pick. Any parse failure is a
/// disagreement.
pub fn agreement_2choice(
    da: &Prediction,
    poe: &Prediction,
    q: &Question,
) -> Result<Agreement, MetricsError> {
    if q.choice_count() != 2 {
        return Err(MetricsError::NotTwoChoice { id: q.id.clone(), n: q.choice_count() });
    }
    for pred in [da, poe] {
        if pred.question_id != q.id {
            return Err(MetricsError::QuestionMismatch {
                got: pred.question_id.clone(),
                want: q.id.clone(),
            });
        }
    }
    let agree = match (da.chosen_label, poe.chosen_label) {
        (Some(d), Some(p)) if da.is_ok() && poe.is_ok() => p != d,
        _ => false,
    };
    Ok(if agree { Agreement::Agree } else { Agreement::Disagree })
}

/// Fraction of questions where two runs of the same strategy chose the same
/// label. A parse failure on either side counts as disagreement.
pub fn self_consistency(
    run1: &[Prediction],
    run2: &[Prediction],
) -> Result<f64, MetricsError> {
    if run1.is_empty() {
        return Err(MetricsError::Empty);
    }
    let pairs = align_by_id(run1, run2)?;
    let same = pairs
        .iter()
        .filter(|(a, b)| {
            a.is_ok() && b.is_ok() && a.chosen_label == b.chosen_label
        })
        .count();
    Ok(same as f64 / pairs.len() as f64)
}

fn align_by_id<'a>(
    a: &'a [Prediction],
    b: &'a [Prediction],
) -> Result<Vec<(&'a Prediction, &'a Prediction)>, MetricsError> {
    let mut a_sorted: Vec<&Prediction> = a.iter().collect();
    let mut b_sorted: Vec<&Prediction> = b.iter().collect();
    a_sorted.sort_by(|x, y| x.question_id.cmp(&y.question_id));
    b_sorted.sort_by(|x, y| x.question_id.cmp(&y.question_id));
    if a_sorted.len() != b_sorted.len() {
        let id = a_sorted
            .first()
            .map(|p| p.question_id.clone())
            .unwrap_or_default();
        return Err(MetricsError::IdMismatch(id));
    }
    for (x, y) in a_sorted.iter().zip(&b_sorted) {
        if x.question_id != y.question_id {
            return Err(MetricsError::IdMismatch(x.question_id.clone()));
        }
    }
    Ok(a_sorted.into_iter().zip(b_sorted).collect())
}

/// Agreement and self-consistency rates for paired strategy runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub agreement_da_poe: f64,
    pub self_consistency_da: f64,
    pub self_consistency_poe: f64,
    pub n: usize,
}

/// Rates over four runs covering the same questions: agreement comes from
/// the first run of each strategy, self-consistency from each strategy's two
/// runs.
pub fn consistency_report(
    da_run1: &[Prediction],
    da_run2: &[Prediction],
    poe_run1: &[Prediction],
    poe_run2: &[Prediction],
    questions: &QuestionIndex,
) -> Result<ConsistencyReport, MetricsError> {
    if da_run1.is_empty() {
        return Err(MetricsError::Empty);
    }
    let self_da = self_consistency(da_run1, da_run2)?;
    let self_poe = self_consistency(poe_run1, poe_run2)?;
    let pairs = align_by_id(da_run1, poe_run1)?;
    let mut agree = 0usize;
    for (da, poe) in &pairs {
        let q = questions
            .get(&da.question_id)
            .ok_or_else(|| MetricsError::UnknownQuestion(da.question_id.clone()))?;
        if agreement_2choice(da, poe, q)? == Agreement::Agree {
            agree += 1;
        }
    }
    Ok(ConsistencyReport {
        agreement_da_poe: agree as f64 / pairs.len() as f64,
        self_consistency_da: self_da,
        self_consistency_poe: self_poe,
        n: pairs.len(),
    })
}
