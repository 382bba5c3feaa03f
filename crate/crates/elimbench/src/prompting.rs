//! Prompt rendering for the direct-answer and elimination strategies, with
//! and without chain-of-thought. Output is byte-stable: LF newlines only,
//! `(<letter>)` label tokens, and a fixed block layout covered by golden
//! tests.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    balanced_gold_slots, derive_seed, label_for, reduce_with_constraints, CorpusError, Question,
    ShotFixture,
};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("shot `{id}`: chain-of-thought rendering requires a rationale")]
    MissingRationale { id: String },
    #[error("shot `{id}`: answer label `{label}` {msg}")]
    BadShotAnswer { id: String, label: char, msg: String },
    #[error("config has no shots; use a zero-shot config to allow this")]
    EmptyShots,
    #[error("shot `{id}` has {shot} choices but the query has {query}")]
    WidthMismatch { id: String, shot: usize, query: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Whether the model is asked to pick the correct choice or to eliminate an
/// incorrect one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    DirectAnswer,
    ProcessOfElimination,
}

impl Strategy {
    /// The answer-key line prefix used in prompt blocks.
    pub fn answer_key(self) -> &'static str {
        match self {
            Strategy::DirectAnswer => "Correct Answer",
            Strategy::ProcessOfElimination => "Incorrect Answer",
        }
    }

    pub fn adjective(self) -> &'static str {
        match self {
            Strategy::DirectAnswer => "correct",
            Strategy::ProcessOfElimination => "incorrect",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::DirectAnswer => write!(f, "DA"),
            Strategy::ProcessOfElimination => write!(f, "PoE"),
        }
    }
}

/// Base answers with only the label; COT reasons step by step first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Base,
    Cot,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Base => write!(f, "Base"),
            Mode::Cot => write!(f, "COT"),
        }
    }
}

/// A `strategy x mode` cell, e.g. `da_base` or `poe_cot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyCell {
    pub strategy: Strategy,
    pub mode: Mode,
}

impl StrategyCell {
    pub const ALL: [StrategyCell; 4] = [
        StrategyCell { strategy: Strategy::DirectAnswer, mode: Mode::Base },
        StrategyCell { strategy: Strategy::DirectAnswer, mode: Mode::Cot },
        StrategyCell { strategy: Strategy::ProcessOfElimination, mode: Mode::Base },
        StrategyCell { strategy: Strategy::ProcessOfElimination, mode: Mode::Cot },
    ];
}

impl fmt::Display for StrategyCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match (self.strategy, self.mode) {
            (Strategy::DirectAnswer, Mode::Base) => "da_base",
            (Strategy::DirectAnswer, Mode::Cot) => "da_cot",
            (Strategy::ProcessOfElimination, Mode::Base) => "poe_base",
            (Strategy::ProcessOfElimination, Mode::Cot) => "poe_cot",
        };
        write!(f, "{s}")
    }
}

impl FromStr for StrategyCell {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cell = match s {
            "da_base" => (Strategy::DirectAnswer, Mode::Base),
            "da_cot" => (Strategy::DirectAnswer, Mode::Cot),
            "poe_base" => (Strategy::ProcessOfElimination, Mode::Base),
            "poe_cot" => (Strategy::ProcessOfElimination, Mode::Cot),
            other => return Err(format!("unknown strategy cell `{other}`")),
        };
        Ok(StrategyCell { strategy: cell.0, mode: cell.1 })
    }
}

impl Serialize for StrategyCell {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StrategyCell {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The instruction line prepended to every prompt of the given strategy.
pub fn canonical_instruction(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::DirectAnswer => {
            "Your goal is to identify the correct answer to the multiple choice question"
        }
        Strategy::ProcessOfElimination => {
            "Your goal is to identify the incorrect answer to the multiple choice question"
        }
    }
}

/// One in-context example: a question plus the label it answers with and,
/// for COT use, the hand-written rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: Question,
    pub answer_label: char,
    pub rationale: Option<String>,
}

impl FewShotExample {
    fn check(&self, strategy: Strategy, mode: Mode) -> Result<(), PromptError> {
        let id = self.question.id.clone();
        if self.question.choice_text(self.answer_label).is_none() {
            return Err(PromptError::BadShotAnswer {
                id,
                label: self.answer_label,
                msg: "is not among the question's labels".into(),
            });
        }
        match strategy {
            Strategy::DirectAnswer if self.answer_label != self.question.gold_label => {
                return Err(PromptError::BadShotAnswer {
                    id,
                    label: self.answer_label,
                    msg: "must equal the gold label for direct-answer shots".into(),
                });
            }
            Strategy::ProcessOfElimination if self.answer_label == self.question.gold_label => {
                return Err(PromptError::BadShotAnswer {
                    id,
                    label: self.answer_label,
                    msg: "must not be the gold label for elimination shots".into(),
                });
            }
            _ => {}
        }
        if mode == Mode::Cot && self.rationale.as_deref().is_none_or(|r| r.trim().is_empty()) {
            return Err(PromptError::MissingRationale { id });
        }
        Ok(())
    }
}

/// A fully specified prompting setup: strategy, mode, instruction, and the
/// ordered shot list (ordering is fixed at construction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub mode: Mode,
    pub instruction: String,
    pub shots: Vec<FewShotExample>,
    zero_shot: bool,
}

impl StrategyConfig {
    pub fn new(
        strategy: Strategy,
        mode: Mode,
        shots: Vec<FewShotExample>,
    ) -> Result<Self, PromptError> {
        if shots.is_empty() {
            return Err(PromptError::EmptyShots);
        }
        for shot in &shots {
            shot.check(strategy, mode)?;
        }
        Ok(StrategyConfig {
            strategy,
            mode,
            instruction: canonical_instruction(strategy).to_string(),
            shots,
            zero_shot: false,
        })
    }

    /// Explicit zero-shot override: instruction plus query block only.
    pub fn zero_shot(strategy: Strategy, mode: Mode) -> Self {
        StrategyConfig {
            strategy,
            mode,
            instruction: canonical_instruction(strategy).to_string(),
            shots: Vec::new(),
            zero_shot: true,
        }
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.instruction = instruction.into();
        self
    }

    pub fn cell(&self) -> StrategyCell {
        StrategyCell { strategy: self.strategy, mode: self.mode }
    }
}

fn push_question_block(out: &mut String, q: &Question) {
    out.push_str("Question: ");
    out.push_str(&q.stem);
    out.push_str("\nChoices:\n");
    for c in &q.choices {
        out.push('(');
        out.push(c.label);
        out.push_str(") ");
        out.push_str(&c.text);
        out.push('\n');
    }
}

/// The answer payload of a COT example: rationale followed by the terminal
/// sentence whose `choice (<L>)` suffix is the parse anchor.
fn cot_answer_line(strategy: Strategy, answer_text: &str, label: char, rationale: &str) -> String {
    format!(
        "{} So the {} answer is \"{}\" which is choice ({})",
        rationale.trim(),
        strategy.adjective(),
        answer_text,
        label
    )
}

/// Renders one in-context example block.
pub fn render_example(
    ex: &FewShotExample,
    strategy: Strategy,
    mode: Mode,
) -> Result<String, PromptError> {
    ex.check(strategy, mode)?;
    let mut out = String::new();
    push_question_block(&mut out, &ex.question);
    out.push_str(strategy.answer_key());
    out.push_str(": ");
    match mode {
        Mode::Base => {
            out.push('(');
            out.push(ex.answer_label);
            out.push(')');
        }
        Mode::Cot => {
            let rationale = ex.rationale.as_deref().expect("checked above");
            let text = ex
                .question
                .choice_text(ex.answer_label)
                .expect("checked above");
            out.push_str(&cot_answer_line(strategy, text, ex.answer_label, rationale));
        }
    }
    Ok(out)
}

/// Renders the query block: question and choices, truncated right after the
/// answer-key label so the model completes the answer.
pub fn render_query(q: &Question, strategy: Strategy) -> String {
    let mut out = String::new();
    push_question_block(&mut out, q);
    out.push_str(strategy.answer_key());
    out.push_str(": ");
    out
}

/// Assembles the full prompt: instruction, blank line, shots joined by blank
/// lines, blank line, query block ending in `"Answer: "`.
pub fn build_prompt(cfg: &StrategyConfig, query: &Question) -> Result<String, PromptError> {
    if cfg.shots.is_empty() && !cfg.zero_shot {
        return Err(PromptError::EmptyShots);
    }
    for shot in &cfg.shots {
        if shot.question.choice_count() != query.choice_count() {
            return Err(PromptError::WidthMismatch {
                id: shot.question.id.clone(),
                shot: shot.question.choice_count(),
                query: query.choice_count(),
            });
        }
    }
    let mut out = String::with_capacity(4096);
    out.push_str(&cfg.instruction);
    for shot in &cfg.shots {
        out.push_str("\n\n");
        out.push_str(&render_example(shot, cfg.strategy, cfg.mode)?);
    }
    out.push_str("\n\n");
    out.push_str(&render_query(query, cfg.strategy));
    Ok(out)
}

/// Resolves the distractor a fixture's elimination example answers with:
/// the designated `poe_answer` when present, otherwise a seeded pick.
fn poe_choice_index(fx: &ShotFixture, rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    match fx.poe_answer {
        Some(i) => i,
        None => {
            let gold = fx.question.gold_index();
            let distractors: Vec<usize> =
                (0..fx.question.choice_count()).filter(|&i| i != gold).collect();
            distractors[rng.random_range(0..distractors.len())]
        }
    }
}

/// Builds the shot list for one strategy/mode cell, reducing each fixture to
/// `k` choices. The gold-position assignment is balanced over slots, the
/// fixture's elimination choice always survives the reduction, and the same
/// `(fixtures, k, seed)` input yields identical question blocks for every
/// strategy/mode, so paired prompts differ only in instruction, answer-key
/// lines, and rationale bodies.
pub fn build_shot_examples(
    fixtures: &[ShotFixture],
    strategy: Strategy,
    mode: Mode,
    k: usize,
    seed: u64,
) -> Result<Vec<FewShotExample>, PromptError> {
    let slots = balanced_gold_slots(fixtures.len(), k, derive_seed(seed, &[0xBA1A]));
    let mut shots = Vec::with_capacity(fixtures.len());
    for (i, fx) in fixtures.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5807, i as u64]));
        let poe_idx = poe_choice_index(fx, &mut rng);
        let reduced = reduce_with_constraints(&fx.question, k, &[poe_idx], Some(slots[i]), &mut rng)?;
        let answer_label = match strategy {
            Strategy::DirectAnswer => reduced.question.gold_label,
            Strategy::ProcessOfElimination => reduced
                .label_of_original(poe_idx)
                .expect("kept distractor survives reduction"),
        };
        let rationale = match (mode, strategy) {
            (Mode::Base, _) => None,
            (Mode::Cot, Strategy::DirectAnswer) => Some(
                fx.rationale_da
                    .clone()
                    .ok_or_else(|| PromptError::MissingRationale { id: fx.question.id.clone() })?,
            ),
            (Mode::Cot, Strategy::ProcessOfElimination) => Some(
                fx.rationale_poe
                    .clone()
                    .ok_or_else(|| PromptError::MissingRationale { id: fx.question.id.clone() })?,
            ),
        };
        let shot = FewShotExample { question: reduced.question, answer_label, rationale };
        shot.check(strategy, mode)?;
        shots.push(shot);
    }
    Ok(shots)
}

/// Shot examples at each fixture's original width, for protocols that
/// re-reduce per query width themselves.
pub fn template_shot_examples(
    fixtures: &[ShotFixture],
    strategy: Strategy,
    mode: Mode,
    seed: u64,
) -> Result<Vec<FewShotExample>, PromptError> {
    let mut shots = Vec::with_capacity(fixtures.len());
    for (i, fx) in fixtures.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5807, i as u64]));
        let poe_idx = poe_choice_index(fx, &mut rng);
        let answer_label = match strategy {
            Strategy::DirectAnswer => fx.question.gold_label,
            Strategy::ProcessOfElimination => label_for(poe_idx),
        };
        let rationale = match (mode, strategy) {
            (Mode::Base, _) => None,
            (Mode::Cot, Strategy::DirectAnswer) => Some(
                fx.rationale_da
                    .clone()
                    .ok_or_else(|| PromptError::MissingRationale { id: fx.question.id.clone() })?,
            ),
            (Mode::Cot, Strategy::ProcessOfElimination) => Some(
                fx.rationale_poe
                    .clone()
                    .ok_or_else(|| PromptError::MissingRationale { id: fx.question.id.clone() })?,
            ),
        };
        let shot = FewShotExample { question: fx.question.clone(), answer_label, rationale };
        shot.check(strategy, mode)?;
        shots.push(shot);
    }
    Ok(shots)
}

/// Fixture-review lint: an elimination rationale should argue why its choice
/// is wrong, not name the correct option as the justification. Returns a
/// warning line per suspicious fixture; never a hard error.
pub fn lint_poe_rationales(fixtures: &[ShotFixture]) -> Vec<String> {
    let mut warnings = Vec::new();
    for fx in fixtures {
        if let Some(rationale) = &fx.rationale_poe {
            let gold = fx.question.gold_text().to_lowercase();
            if rationale.to_lowercase().contains(&gold) {
                warnings.push(format!(
                    "shot `{}`: elimination rationale mentions the correct option \"{}\"",
                    fx.question.id,
                    fx.question.gold_text()
                ));
            }
        }
    }
    warnings
}
