//! Manual error-category annotations. The taxonomy is closed to six
//! categories and the harness only stores and tallies labels; it never
//! assigns them.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::runner::record::RunRecord;
use crate::runner::RunnerError;

/// Why an elimination rationale failed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum ErrorCategory {
    /// Justifies a choice as correct instead of incorrect, or never says why
    /// its selection is wrong.
    MisalignedRationale,
    /// Inaccurate premise or conclusion in the reasoning chain.
    ReasoningError,
    /// Restates the choice without breaking the reasoning into steps.
    NoBreakdown,
    /// References parts of the question that do not exist.
    Hallucination,
    /// The question does not suit elimination at all.
    #[serde(rename = "PoENotApplicable")]
    PoeNotApplicable,
    /// Quality problem in the underlying dataset item.
    DatasetIssue,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::MisalignedRationale,
        ErrorCategory::ReasoningError,
        ErrorCategory::NoBreakdown,
        ErrorCategory::Hallucination,
        ErrorCategory::PoeNotApplicable,
        ErrorCategory::DatasetIssue,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub question_id: String,
    pub category: ErrorCategory,
    pub annotator: String,
    #[serde(default)]
    pub note: String,
}

/// The stored annotation state after a merge: full history plus the
/// effective set where the latest entry per `(question, annotator)` wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub history_len: usize,
    pub effective: Vec<ErrorAnnotation>,
    pub histogram: BTreeMap<ErrorCategory, usize>,
}

impl AnnotationSummary {
    pub fn fraction(&self, category: ErrorCategory) -> f64 {
        if self.effective.is_empty() {
            return 0.0;
        }
        *self.histogram.get(&category).unwrap_or(&0) as f64 / self.effective.len() as f64
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<ErrorAnnotation>, RunnerError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RunnerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: ErrorAnnotation =
            serde_json::from_str(&line).map_err(|e| RunnerError::Corrupt {
                path: format!("{}:{}", path.display(), i + 1),
                msg: e.to_string(),
            })?;
        out.push(ann);
    }
    Ok(out)
}

/// Appends `annotations` to the store after validating their targets, then
/// returns the summary over the whole history.
pub fn annotate_errors(
    record: &RunRecord,
    annotations: &[ErrorAnnotation],
    store_path: &Path,
) -> Result<AnnotationSummary, RunnerError> {
    for ann in annotations {
        let known = record
            .transcripts
            .iter()
            .any(|t| t.question_id == ann.question_id)
            || record.eval_questions.iter().any(|q| q.id == ann.question_id);
        if !known {
            return Err(RunnerError::UnknownAnnotationTarget(ann.question_id.clone()));
        }
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(store_path)
        .map_err(|source| RunnerError::Io {
            path: store_path.display().to_string(),
            source,
        })?;
    for ann in annotations {
        let line = serde_json::to_string(ann).expect("annotation serializes");
        writeln!(file, "{line}").map_err(|source| RunnerError::Io {
            path: store_path.display().to_string(),
            source,
        })?;
    }
    let history = load_annotations(store_path)?;
    Ok(summarize(&history))
}

/// Latest annotation per `(question, annotator)` wins; earlier entries stay
/// in history.
pub fn summarize(history: &[ErrorAnnotation]) -> AnnotationSummary {
    let mut latest: BTreeMap<(String, String), ErrorAnnotation> = BTreeMap::new();
    for ann in history {
        latest.insert((ann.question_id.clone(), ann.annotator.clone()), ann.clone());
    }
    let effective: Vec<ErrorAnnotation> = latest.into_values().collect();
    let mut histogram = BTreeMap::new();
    for ann in &effective {
        *histogram.entry(ann.category).or_insert(0) += 1;
    }
    AnnotationSummary {
        history_len: history.len(),
        effective,
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Question;

    fn record_with_questions(n: usize) -> RunRecord {
        RunRecord {
            config_hash: "h".into(),
            dataset_name: "d".into(),
            backend_id: "b".into(),
            started_unix: 0,
            finished_unix: 0,
            complete: true,
            incomplete_reason: None,
            parse_failure_rate: 0.0,
            lint_warnings: vec![],
            eval_questions: (0..n)
                .map(|i| {
                    Question::new(
                        format!("q{i}"),
                        "stem?",
                        vec!["a".into(), "b".into()],
                        0,
                    )
                    .unwrap()
                })
                .collect(),
            transcripts: vec![],
            traces: vec![],
        }
    }

    fn ann(q: &str, category: ErrorCategory, who: &str) -> ErrorAnnotation {
        ErrorAnnotation {
            question_id: q.into(),
            category,
            annotator: who.into(),
            note: String::new(),
        }
    }

    #[test]
    fn histogram_counts_fractions() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("ann.jsonl");
        let record = record_with_questions(50);
        let annotations: Vec<ErrorAnnotation> = (0..50)
            .map(|i| {
                let category = if i < 20 {
                    ErrorCategory::ReasoningError
                } else {
                    ErrorCategory::Hallucination
                };
                ann(&format!("q{i}"), category, "a1")
            })
            .collect();
        let summary = annotate_errors(&record, &annotations, &store).unwrap();
        assert_eq!(summary.histogram[&ErrorCategory::ReasoningError], 20);
        assert!((summary.fraction(ErrorCategory::ReasoningError) - 0.40).abs() < 1e-12);
    }

    #[test]
    fn latest_annotation_wins_history_retained() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("ann.jsonl");
        let record = record_with_questions(1);
        annotate_errors(&record, &[ann("q0", ErrorCategory::NoBreakdown, "a1")], &store).unwrap();
        let summary =
            annotate_errors(&record, &[ann("q0", ErrorCategory::DatasetIssue, "a1")], &store)
                .unwrap();
        assert_eq!(summary.history_len, 2);
        assert_eq!(summary.effective.len(), 1);
        assert_eq!(summary.effective[0].category, ErrorCategory::DatasetIssue);
        // a different annotator is a separate effective entry
        let summary =
            annotate_errors(&record, &[ann("q0", ErrorCategory::NoBreakdown, "a2")], &store)
                .unwrap();
        assert_eq!(summary.effective.len(), 2);
    }

    #[test]
    fn unknown_question_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("ann.jsonl");
        let record = record_with_questions(1);
        let err = annotate_errors(
            &record,
            &[ann("nope", ErrorCategory::Hallucination, "a1")],
            &store,
        );
        assert!(matches!(err, Err(RunnerError::UnknownAnnotationTarget(_))));
        assert!(!store.exists(), "nothing persisted on validation failure");
    }

    #[test]
    fn category_set_is_closed() {
        let parsed: Result<ErrorAnnotation, _> = serde_json::from_str(
            r#"{"question_id": "q0", "category": "Other", "annotator": "a1"}"#,
        );
        assert!(parsed.is_err(), "unknown category must be rejected");
        let ok: ErrorAnnotation = serde_json::from_str(
            r#"{"question_id": "q0", "category": "PoENotApplicable", "annotator": "a1"}"#,
        )
        .unwrap();
        assert_eq!(ok.category, ErrorCategory::PoeNotApplicable);
    }
}
