//! Iterative elimination: repeatedly discard choices with the elimination
//! strategy while running the direct strategy at every intermediate width,
//! then measure how errors propagate.
//!
//! Each prompt is independent: no transcript is carried between steps, so
//! the model never sees its previous decisions. Surviving choices are
//! re-lettered contiguously (order-preserving) because prompts must show
//! consecutive labels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, GenParams};
use crate::corpus::{
    balanced_gold_slots, derive_seed, label_for, reduce_with_constraints, Choice, CorpusError,
    Question,
};
use crate::hashing::{fnv1a, sha256_hex};
use crate::parsing::{extract_answer, to_prediction, ParseStatus, Prediction};
use crate::prompting::{build_prompt, FewShotExample, Mode, PromptError, Strategy, StrategyConfig};

#[derive(Debug, Error)]
pub enum IterativeError {
    #[error("question `{id}`: {msg}")]
    BadInput { id: String, msg: String },
    #[error("configs must pair the elimination strategy with the direct one in the same mode")]
    BadConfigPair,
    #[error("shot `{id}` has {width} choices; every shot needs at least {needed}")]
    ShotTooNarrow { id: String, width: usize, needed: usize },
    #[error("backend failure at width {width}: {source}")]
    Backend {
        width: usize,
        #[source]
        source: BackendError,
        /// Whatever the protocol completed before the failure.
        partial: Box<EliminationTrace>,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("no traces given")]
    Empty,
    #[error("trace `{id}` has no record at width {width}")]
    WidthMissing { id: String, width: usize },
}

/// One elimination: the choices as shown, the discarded label, and whether
/// the gold survived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationStep {
    pub step_index: usize,
    /// Choices presented at this step, relabeled `A..`.
    pub remaining_before: Vec<Choice>,
    /// Label eliminated, within `remaining_before`.
    pub eliminated_label: char,
    /// Position of the eliminated choice in the original question.
    pub eliminated_original_index: usize,
    pub gold_alive_after: bool,
    pub parse_status: ParseStatus,
    pub raw_text: String,
    pub prompt_hash: String,
}

/// Full record of the protocol on one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationTrace {
    pub question_id: String,
    pub mode: Mode,
    pub steps: Vec<EliminationStep>,
    /// Direct-answer prediction at every width from `n` down to 2.
    pub da_at_width: BTreeMap<usize, Prediction>,
    /// Gold's label at each width, absent once eliminated.
    pub gold_label_at_width: BTreeMap<usize, Option<char>>,
    pub da_prompt_hashes: BTreeMap<usize, String>,
    /// Eliminations that fell back to a seeded random removal because the
    /// completion did not parse.
    pub fallback_steps: usize,
}

impl EliminationTrace {
    pub fn gold_alive_at(&self, width: usize) -> Option<bool> {
        self.gold_label_at_width.get(&width).map(Option::is_some)
    }

    /// Whether the direct strategy picked the (still-alive) gold at `width`.
    pub fn da_correct_at(&self, width: usize) -> Option<bool> {
        let pred = self.da_at_width.get(&width)?;
        let gold = self.gold_label_at_width.get(&width)?;
        Some(match (gold, pred.chosen_label) {
            (Some(g), Some(chosen)) => pred.is_ok() && chosen == *g,
            _ => false,
        })
    }

    pub fn step_at_width(&self, width: usize) -> Option<&EliminationStep> {
        self.steps.iter().find(|s| s.remaining_before.len() == width)
    }
}

/// The question restricted to `surviving` (original indices), order
/// preserved, relabeled `A..`.
fn subquestion(q: &Question, surviving: &[usize]) -> Question {
    let choices = surviving
        .iter()
        .enumerate()
        .map(|(i, &orig)| Choice { label: label_for(i), text: q.choices[orig].text.clone() })
        .collect();
    let gold_label = surviving
        .iter()
        .position(|&orig| orig == q.gold_index())
        .map(label_for)
        // when the gold is gone any label validates; the first stands in and
        // gold_label_at_width records the truth
        .unwrap_or('A');
    Question { id: q.id.clone(), stem: q.stem.clone(), choices, gold_label }
}

/// Shots for one width: each shot question is reduced to `width` choices
/// keeping its answer choice alive, with gold slots balanced by seed.
fn shots_at_width(
    cfg: &StrategyConfig,
    width: usize,
    seed: u64,
) -> Result<Vec<FewShotExample>, IterativeError> {
    let tag = match cfg.strategy {
        Strategy::DirectAnswer => 0xD0u64,
        Strategy::ProcessOfElimination => 0xE0u64,
    };
    let slots = balanced_gold_slots(cfg.shots.len(), width, derive_seed(seed, &[tag, width as u64]));
    let mut shots = Vec::with_capacity(cfg.shots.len());
    for (i, shot) in cfg.shots.iter().enumerate() {
        let answer_idx = (shot.answer_label as u8 - b'A') as usize;
        let keep: Vec<usize> = if answer_idx == shot.question.gold_index() {
            Vec::new()
        } else {
            vec![answer_idx]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[tag, width as u64, i as u64],
        ));
        let reduced =
            reduce_with_constraints(&shot.question, width, &keep, Some(slots[i]), &mut rng)?;
        let answer_label = reduced
            .label_of_original(answer_idx)
            .expect("answer choice was kept");
        shots.push(FewShotExample {
            question: reduced.question,
            answer_label,
            rationale: shot.rationale.clone(),
        });
    }
    Ok(shots)
}

fn width_config(
    cfg: &StrategyConfig,
    width: usize,
    seed: u64,
) -> Result<StrategyConfig, IterativeError> {
    if cfg.shots.is_empty() {
        return Ok(StrategyConfig::zero_shot(cfg.strategy, cfg.mode)
            .with_instruction(cfg.instruction.clone()));
    }
    let shots = shots_at_width(cfg, width, seed)?;
    Ok(StrategyConfig::new(cfg.strategy, cfg.mode, shots)?
        .with_instruction(cfg.instruction.clone()))
}

/// Runs the protocol on one question: for widths `n` down to 2, query the
/// direct strategy on the remaining choices; while more than two remain,
/// eliminate one with the elimination strategy. A parse-failed elimination
/// removes a seeded random remaining choice and is flagged on the trace.
pub fn run_iterative(
    q: &Question,
    poe_cfg: &StrategyConfig,
    da_cfg: &StrategyConfig,
    backend: &dyn CompletionBackend,
    params: &GenParams,
    seed: u64,
) -> Result<EliminationTrace, IterativeError> {
    q.validate().map_err(|e| IterativeError::BadInput {
        id: q.id.clone(),
        msg: e.to_string(),
    })?;
    if da_cfg.strategy != Strategy::DirectAnswer
        || poe_cfg.strategy != Strategy::ProcessOfElimination
        || da_cfg.mode != poe_cfg.mode
    {
        return Err(IterativeError::BadConfigPair);
    }
    let n = q.choice_count();
    for cfg in [da_cfg, poe_cfg] {
        for shot in &cfg.shots {
            if shot.question.choice_count() < n {
                return Err(IterativeError::ShotTooNarrow {
                    id: shot.question.id.clone(),
                    width: shot.question.choice_count(),
                    needed: n,
                });
            }
        }
    }

    let mut trace = EliminationTrace {
        question_id: q.id.clone(),
        mode: da_cfg.mode,
        steps: Vec::new(),
        da_at_width: BTreeMap::new(),
        gold_label_at_width: BTreeMap::new(),
        da_prompt_hashes: BTreeMap::new(),
        fallback_steps: 0,
    };
    let mut surviving: Vec<usize> = (0..n).collect();

    for width in (2..=n).rev() {
        let sub = subquestion(q, &surviving);
        let gold_label = surviving
            .iter()
            .position(|&orig| orig == q.gold_index())
            .map(label_for);
        trace.gold_label_at_width.insert(width, gold_label);

        let da_w = width_config(da_cfg, width, seed)?;
        let da_prompt = build_prompt(&da_w, &sub)?;
        let resp = backend.complete(&da_prompt, params).map_err(|source| {
            IterativeError::Backend { width, source, partial: Box::new(trace.clone()) }
        })?;
        trace
            .da_prompt_hashes
            .insert(width, sha256_hex(da_prompt.as_bytes()));
        trace
            .da_at_width
            .insert(width, to_prediction(&resp, &sub, Strategy::DirectAnswer, da_cfg.mode));

        if width == 2 {
            break;
        }

        let poe_w = width_config(poe_cfg, width, seed)?;
        let poe_prompt = build_prompt(&poe_w, &sub)?;
        let resp = backend.complete(&poe_prompt, params).map_err(|source| {
            IterativeError::Backend { width, source, partial: Box::new(trace.clone()) }
        })?;
        let step_index = n - width;
        let extraction = extract_answer(&resp.text, &sub.labels(), poe_cfg.mode);
        let eliminated_label = match extraction.label {
            Some(label) => label,
            None => {
                trace.fallback_steps += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    &[0xFA11, fnv1a(q.id.as_bytes()), step_index as u64],
                ));
                label_for(rng.random_range(0..width))
            }
        };
        let pos = (eliminated_label as u8 - b'A') as usize;
        let eliminated_original_index = surviving.remove(pos);
        trace.steps.push(EliminationStep {
            step_index,
            remaining_before: sub.choices.clone(),
            eliminated_label,
            eliminated_original_index,
            gold_alive_after: surviving.contains(&q.gold_index()),
            parse_status: extraction.status,
            raw_text: resp.text,
            prompt_hash: sha256_hex(poe_prompt.as_bytes()),
        });
    }

    Ok(trace)
}

fn require_width(traces: &[EliminationTrace], width: usize) -> Result<(), IterativeError> {
    if traces.is_empty() {
        return Err(IterativeError::Empty);
    }
    for t in traces {
        if !t.da_at_width.contains_key(&width) {
            return Err(IterativeError::WidthMissing { id: t.question_id.clone(), width });
        }
    }
    Ok(())
}

/// Fraction of ALL questions answered correctly at `width`; questions whose
/// gold was already eliminated count as wrong.
pub fn raw_accuracy(traces: &[EliminationTrace], width: usize) -> Result<f64, IterativeError> {
    require_width(traces, width)?;
    let correct = traces
        .iter()
        .filter(|t| t.da_correct_at(width) == Some(true))
        .count();
    Ok(correct as f64 / traces.len() as f64)
}

/// Accuracies conditioned on the gold still being among the remaining
/// choices. Empty conditioning sets are reported as absent, not zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalAccuracy {
    /// Among traces with the gold alive at this width: fraction where the
    /// direct strategy picked it.
    pub da: Option<f64>,
    /// Among traces with the gold alive entering the elimination performed
    /// at this width: fraction where a non-gold choice was discarded.
    pub poe: Option<f64>,
}

pub fn conditional_accuracies(
    traces: &[EliminationTrace],
    width: usize,
) -> Result<ConditionalAccuracy, IterativeError> {
    require_width(traces, width)?;

    let gold_alive: Vec<&EliminationTrace> = traces
        .iter()
        .filter(|t| t.gold_alive_at(width) == Some(true))
        .collect();
    let da = if gold_alive.is_empty() {
        None
    } else {
        let correct = gold_alive
            .iter()
            .filter(|t| t.da_correct_at(width) == Some(true))
            .count();
        Some(correct as f64 / gold_alive.len() as f64)
    };

    let elimination_set: Vec<&EliminationStep> = gold_alive
        .iter()
        .filter_map(|t| t.step_at_width(width))
        .collect();
    let poe = if elimination_set.is_empty() {
        None
    } else {
        let kept_gold = elimination_set.iter().filter(|s| s.gold_alive_after).count();
        Some(kept_gold as f64 / elimination_set.len() as f64)
    };

    Ok(ConditionalAccuracy { da, poe })
}
