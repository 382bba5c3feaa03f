//! Answer extraction from free-text completions.
//!
//! Completions may restate several labels; the final one is authoritative
//! because the canonical rationale format puts the decision last. Extraction
//! is total: every input maps to a parse status, never an error.

use serde::{Deserialize, Serialize};

use crate::backend::ModelResponse;
use crate::corpus::Question;
use crate::prompting::{Mode, Strategy};

/// Outcome of scanning a completion for an answer label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// Exactly one final answer label was recovered.
    Ok,
    /// Reserved for future multi-answer formats; unused while the
    /// last-match rule is in force.
    Ambiguous,
    /// No label from the valid set appeared in an answer position.
    NoLabel,
}

/// Parsed outcome of one strategy on one question. For the elimination
/// strategy, `chosen_label` denotes the choice the model discarded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub strategy: Strategy,
    pub mode: Mode,
    pub chosen_label: Option<char>,
    pub rationale: Option<String>,
    pub parse_status: ParseStatus,
    pub raw_text: String,
}

impl Prediction {
    pub fn is_ok(&self) -> bool {
        self.parse_status == ParseStatus::Ok
    }
}

/// Result of [`extract_answer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub label: Option<char>,
    pub status: ParseStatus,
    pub rationale: Option<String>,
}

/// Byte position of every `(<L>)` occurrence with `L` in the valid set.
fn parenthesized_matches(text: &str, valid_labels: &[char]) -> Vec<(usize, char)> {
    let bytes = text.as_bytes();
    let mut matches = Vec::new();
    let mut i = 0;
    while i + 2 < bytes.len() {
        if bytes[i] == b'(' && bytes[i + 2] == b')' {
            let label = bytes[i + 1] as char;
            if valid_labels.contains(&label) {
                matches.push((i, label));
            }
        }
        i += 1;
    }
    matches
}

/// A bare label at the very start of the text: `"B"`, `"B."`, `"B) ..."`.
fn bare_leading_label(text: &str, valid_labels: &[char]) -> Option<char> {
    let trimmed = text.trim_start();
    let mut chars = trimmed.chars();
    let first = chars.next()?;
    if !valid_labels.contains(&first) {
        return None;
    }
    match chars.next() {
        None => Some(first),
        Some(next) if !next.is_ascii_alphanumeric() => Some(first),
        _ => None,
    }
}

/// Everything before the sentence that carries the final answer.
fn rationale_before(text: &str, match_pos: usize) -> Option<String> {
    let head = &text[..match_pos];
    let boundary = head.rfind(['.', '!', '?', '\n'])?;
    let slice = text[..=boundary].trim();
    if slice.is_empty() {
        None
    } else {
        Some(slice.to_string())
    }
}

/// Scans `text` for `choice (<L>)` / standalone `(<L>)` patterns and returns
/// the last match; in [`Mode::Base`] a bare leading label is also accepted.
/// Total over all inputs: failures surface as [`ParseStatus::NoLabel`].
pub fn extract_answer(text: &str, valid_labels: &[char], mode: Mode) -> Extraction {
    debug_assert!(!valid_labels.is_empty(), "valid label set must be non-empty");
    let matches = parenthesized_matches(text, valid_labels);
    if let Some(&(pos, label)) = matches.last() {
        return Extraction {
            label: Some(label),
            status: ParseStatus::Ok,
            rationale: rationale_before(text, pos),
        };
    }
    if mode == Mode::Base {
        if let Some(label) = bare_leading_label(text, valid_labels) {
            return Extraction {
                label: Some(label),
                status: ParseStatus::Ok,
                rationale: None,
            };
        }
    }
    Extraction {
        label: None,
        status: ParseStatus::NoLabel,
        rationale: None,
    }
}

/// Wraps [`extract_answer`] over a backend response for one question.
pub fn to_prediction(
    resp: &ModelResponse,
    q: &Question,
    strategy: Strategy,
    mode: Mode,
) -> Prediction {
    let labels = q.labels();
    let extraction = extract_answer(&resp.text, &labels, mode);
    Prediction {
        question_id: q.id.clone(),
        strategy,
        mode,
        chosen_label: extraction.label,
        rationale: extraction.rationale,
        parse_status: extraction.status,
        raw_text: resp.text.clone(),
    }
}
