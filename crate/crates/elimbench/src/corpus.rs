//! MCQA corpus handling: loading record-stream datasets, reducing questions to
//! k choices, and drawing seeded evaluation/shot splits.
//!
//! All sampling is a pure function of `(source data, seed)`; no global RNG
//! state is touched, so everything here is safe to call concurrently.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid question `{id}`: {msg}")]
    InvalidQuestion { id: String, msg: String },
    #[error("cannot reduce `{id}` to {k} choices: {msg}")]
    Reduce { id: String, k: usize, msg: String },
    #[error("requested {requested} questions but only {available} available")]
    InsufficientSource { requested: usize, available: usize },
    #[error("unknown dataset schema `{0}` (expected canonical, allenai, or social_iqa)")]
    UnknownSchema(String),
}

/// Turns a 0-based choice index into its display label (`0 -> 'A'`).
pub fn label_for(index: usize) -> char {
    debug_assert!(index < 26, "choice index out of label range");
    (b'A' + index as u8) as char
}

/// One labeled answer option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: char,
    pub text: String,
}

/// A multiple-choice question with labels normalized to `A, B, C, ...` and a
/// single gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    pub choices: Vec<Choice>,
    pub gold_label: char,
}

impl Question {
    /// Builds a question from raw choice texts and a gold index, assigning
    /// labels `A..` in order. Validates all invariants.
    pub fn new(
        id: impl Into<String>,
        stem: impl Into<String>,
        choice_texts: Vec<String>,
        gold_index: usize,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        if choice_texts.len() > 26 {
            return Err(CorpusError::InvalidQuestion {
                id,
                msg: format!("{} choices exceed the label alphabet", choice_texts.len()),
            });
        }
        if gold_index >= choice_texts.len() {
            return Err(CorpusError::InvalidQuestion {
                id,
                msg: format!(
                    "gold index {gold_index} out of range for {} choices",
                    choice_texts.len()
                ),
            });
        }
        let choices = choice_texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| Choice {
                label: label_for(i),
                text,
            })
            .collect();
        let q = Question {
            id,
            stem: stem.into(),
            choices,
            gold_label: label_for(gold_index),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |msg: String| {
            Err(CorpusError::InvalidQuestion {
                id: self.id.clone(),
                msg,
            })
        };
        if self.stem.trim().is_empty() {
            return fail("empty stem".into());
        }
        if self.stem.contains('\n') {
            return fail("stem contains a newline".into());
        }
        if self.choices.len() < 2 {
            return fail(format!("{} choices; need at least 2", self.choices.len()));
        }
        if self.choices.len() > 26 {
            return fail(format!("{} choices exceed the label alphabet", self.choices.len()));
        }
        for (i, c) in self.choices.iter().enumerate() {
            if c.label != label_for(i) {
                return fail(format!(
                    "label `{}` at position {i}; labels must be consecutive from A",
                    c.label
                ));
            }
            if c.text.trim().is_empty() {
                return fail(format!("choice ({}) has empty text", c.label));
            }
            if c.text.contains('\n') {
                return fail(format!("choice ({}) text contains a newline", c.label));
            }
        }
        if !self.choices.iter().any(|c| c.label == self.gold_label) {
            return fail(format!("gold label `{}` not among choices", self.gold_label));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<char> {
        self.choices.iter().map(|c| c.label).collect()
    }

    pub fn choice_count(&self) -> usize {
        self.choices.len()
    }

    pub fn gold_index(&self) -> usize {
        (self.gold_label as u8 - b'A') as usize
    }

    pub fn gold_text(&self) -> &str {
        &self.choices[self.gold_index()].text
    }

    pub fn choice_text(&self, label: char) -> Option<&str> {
        self.choices
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.text.as_str())
    }
}

/// Record layout of a source dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSchema {
    /// Flat records: `{id?, question, choices: [..], gold: <index>}`.
    #[default]
    Canonical,
    /// AllenAI-style exports (ARC, OpenBookQA, CommonsenseQA):
    /// `{id?, question: {stem, choices: [{label, text}]}, answerKey}`.
    Allenai,
    /// Social IQa: `{context, question, answerA, answerB, answerC, label}`.
    SocialIqa,
}

impl FromStr for DatasetSchema {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "allenai" => Ok(Self::Allenai),
            "social_iqa" | "siqa" => Ok(Self::SocialIqa),
            other => Err(CorpusError::UnknownSchema(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Canonical => write!(f, "canonical"),
            Self::Allenai => write!(f, "allenai"),
            Self::SocialIqa => write!(f, "social_iqa"),
        }
    }
}

#[derive(Deserialize)]
struct CanonicalRecord {
    id: Option<String>,
    question: String,
    choices: Vec<String>,
    gold: usize,
}

#[derive(Deserialize)]
struct AllenaiRecord {
    id: Option<String>,
    question: AllenaiQuestion,
    #[serde(rename = "answerKey")]
    answer_key: String,
}

#[derive(Deserialize)]
struct AllenaiQuestion {
    stem: String,
    choices: Vec<AllenaiChoice>,
}

#[derive(Deserialize)]
struct AllenaiChoice {
    label: String,
    text: String,
}

#[derive(Deserialize)]
struct SocialIqaRecord {
    context: String,
    question: String,
    #[serde(rename = "answerA")]
    answer_a: String,
    #[serde(rename = "answerB")]
    answer_b: String,
    #[serde(rename = "answerC")]
    answer_c: String,
    label: String,
}

fn record_err(path: &Path, line: usize, msg: impl Into<String>) -> CorpusError {
    CorpusError::Record {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads a line-delimited dataset, returning validated questions in file
/// order with labels normalized to `A, B, C, ...`. Blank lines are skipped;
/// records without an `id` get `<file>:<line>` assigned.
pub fn load_dataset(path: &Path, schema: DatasetSchema) -> Result<Vec<Question>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut questions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let default_id = format!("{}:{}", path.display(), line_no);
        let question = parse_record(&line, schema, default_id)
            .map_err(|msg| record_err(path, line_no, msg))?;
        questions.push(question);
    }
    Ok(questions)
}

fn parse_record(
    line: &str,
    schema: DatasetSchema,
    default_id: String,
) -> Result<Question, String> {
    let build = |id: Option<String>, stem: String, texts: Vec<String>, gold: usize| {
        Question::new(id.unwrap_or(default_id.clone()), stem, texts, gold)
            .map_err(|e| e.to_string())
    };
    match schema {
        DatasetSchema::Canonical => {
            let rec: CanonicalRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            build(rec.id, rec.question, rec.choices, rec.gold)
        }
        DatasetSchema::Allenai => {
            let rec: AllenaiRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let matches: Vec<usize> = rec
                .question
                .choices
                .iter()
                .enumerate()
                .filter(|(_, c)| c.label == rec.answer_key)
                .map(|(i, _)| i)
                .collect();
            let gold = match matches.as_slice() {
                [one] => *one,
                [] => return Err(format!("answerKey `{}` not among choice labels", rec.answer_key)),
                _ => {
                    return Err(format!(
                        "answerKey `{}` matches {} choices",
                        rec.answer_key,
                        matches.len()
                    ))
                }
            };
            let texts = rec.question.choices.into_iter().map(|c| c.text).collect();
            build(rec.id, rec.question.stem, texts, gold)
        }
        DatasetSchema::SocialIqa => {
            let rec: SocialIqaRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let gold: usize = rec
                .label
                .trim()
                .parse::<usize>()
                .ok()
                .and_then(|v| v.checked_sub(1))
                .ok_or_else(|| format!("label `{}` is not 1, 2, or 3", rec.label))?;
            let stem = format!("{} {}", rec.context.trim(), rec.question.trim());
            build(None, stem, vec![rec.answer_a, rec.answer_b, rec.answer_c], gold)
        }
    }
}

/// A shot fixture: a question plus the hand-written rationales and the
/// designated incorrect answer used to build in-context examples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShotFixture {
    pub question: Question,
    pub rationale_da: Option<String>,
    pub rationale_poe: Option<String>,
    /// Index (into `question.choices`) of the incorrect choice the
    /// elimination rationale argues against.
    pub poe_answer: Option<usize>,
}

#[derive(Deserialize)]
struct FixtureRecord {
    id: Option<String>,
    question: String,
    choices: Vec<String>,
    gold: usize,
    rationale_da: Option<String>,
    rationale_poe: Option<String>,
    poe_answer: Option<usize>,
}

/// Loads shot fixtures from a canonical record stream. Plain question files
/// work too; their rationale fields simply come back `None`.
pub fn load_shot_fixtures(path: &Path) -> Result<Vec<ShotFixture>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut fixtures = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureRecord =
            serde_json::from_str(&line).map_err(|e| record_err(path, line_no, e.to_string()))?;
        let default_id = format!("{}:{}", path.display(), line_no);
        let question = Question::new(
            rec.id.unwrap_or(default_id),
            rec.question,
            rec.choices,
            rec.gold,
        )
        .map_err(|e| record_err(path, line_no, e.to_string()))?;
        if let Some(poe) = rec.poe_answer {
            if poe >= question.choice_count() {
                return Err(record_err(
                    path,
                    line_no,
                    format!("poe_answer {poe} out of range"),
                ));
            }
            if poe == question.gold_index() {
                return Err(record_err(path, line_no, "poe_answer names the gold choice"));
            }
        }
        fixtures.push(ShotFixture {
            question,
            rationale_da: rec.rationale_da.filter(|r| !r.trim().is_empty()),
            rationale_poe: rec.rationale_poe.filter(|r| !r.trim().is_empty()),
            poe_answer: rec.poe_answer,
        });
    }
    Ok(fixtures)
}

/// Result of reducing a question: the reduced form plus, for each new slot,
/// the index of the choice in the original question.
#[derive(Debug, Clone)]
pub struct ReducedQuestion {
    pub question: Question,
    pub original_indices: Vec<usize>,
}

impl ReducedQuestion {
    /// New label of the original choice at `original_index`, if it survived.
    pub fn label_of_original(&self, original_index: usize) -> Option<char> {
        self.original_indices
            .iter()
            .position(|&i| i == original_index)
            .map(label_for)
    }
}

/// Reduces `q` to `k` choices keeping the gold: the `k - 1` kept distractors
/// are drawn uniformly without replacement, survivors are placed by a seeded
/// shuffle and relabeled `A..`, so the gold position is uniform over slots.
pub fn reduce_to_k_choices(
    q: &Question,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Question, CorpusError> {
    reduce_with_constraints(q, k, &[], None, rng).map(|r| r.question)
}

/// Reduction primitive. `keep_indices` are distractor positions that must
/// survive; `gold_slot`, when given, forces the gold's final position while
/// the rest are shuffled.
pub fn reduce_with_constraints(
    q: &Question,
    k: usize,
    keep_indices: &[usize],
    gold_slot: Option<usize>,
    rng: &mut impl Rng,
) -> Result<ReducedQuestion, CorpusError> {
    q.validate()?;
    let n = q.choice_count();
    let fail = |msg: String| {
        Err(CorpusError::Reduce {
            id: q.id.clone(),
            k,
            msg,
        })
    };
    if k < 2 {
        return fail("k must be at least 2".into());
    }
    if k > n {
        return fail(format!("question has only {n} choices"));
    }
    let gold = q.gold_index();
    let keep: BTreeSet<usize> = keep_indices.iter().copied().collect();
    if keep.contains(&gold) {
        return fail("keep set must not include the gold choice".into());
    }
    if let Some(&bad) = keep.iter().find(|&&i| i >= n) {
        return fail(format!("keep index {bad} out of range"));
    }
    if keep.len() > k - 1 {
        return fail(format!("{} kept distractors exceed k - 1", keep.len()));
    }
    if let Some(slot) = gold_slot {
        if slot >= k {
            return fail(format!("gold slot {slot} out of range for k={k}"));
        }
    }

    let pool: Vec<usize> = (0..n)
        .filter(|&i| i != gold && !keep.contains(&i))
        .collect();
    let extra_needed = k - 1 - keep.len();
    let picked = index::sample(rng, pool.len(), extra_needed)
        .into_iter()
        .map(|i| pool[i]);

    let mut survivors: Vec<usize> = Vec::with_capacity(k);
    survivors.push(gold);
    survivors.extend(keep.iter().copied());
    survivors.extend(picked);

    match gold_slot {
        Some(slot) => {
            let mut others: Vec<usize> = survivors[1..].to_vec();
            others.shuffle(rng);
            others.insert(slot, gold);
            survivors = others;
        }
        None => survivors.shuffle(rng),
    }

    let texts: Vec<String> = survivors
        .iter()
        .map(|&i| q.choices[i].text.clone())
        .collect();
    let new_gold = survivors.iter().position(|&i| i == gold).expect("gold kept");
    let question = Question::new(q.id.clone(), q.stem.clone(), texts, new_gold)?;
    Ok(ReducedQuestion {
        question,
        original_indices: survivors,
    })
}

/// Deterministic seed derivation (splitmix64 over the parts).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = seed;
    for &p in parts {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Gold-position assignment for a list of shots reduced to `k` choices:
/// each slot gets `count / k` shots, the remainder slots are chosen by seed,
/// and the assignment order is a seeded shuffle. For `count = 10, k = 2`
/// this yields exactly five golds at (A) and five at (B).
pub fn balanced_gold_slots(count: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k >= 1, "k must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5105]));
    let mut slots = Vec::with_capacity(count);
    for slot in 0..k {
        slots.extend(std::iter::repeat_n(slot, count / k));
    }
    let remainder = count - slots.len();
    let extra = index::sample(&mut rng, k, remainder.min(k));
    for slot in extra.into_iter().take(remainder) {
        slots.push(slot);
    }
    // remainder > k only when count < k impossible cases are guarded by min above
    while slots.len() < count {
        slots.push(rng.random_range(0..k));
    }
    slots.shuffle(&mut rng);
    slots
}

/// Reduces every question in an evaluation set to `k` choices with uniform
/// seeded gold placement. The RNG for question `i` depends only on
/// `(seed, i)`, so the output is stable regardless of call context.
pub fn reduce_eval_set(
    questions: &[Question],
    k: usize,
    seed: u64,
) -> Result<Vec<Question>, CorpusError> {
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xE7A1, i as u64]));
            reduce_to_k_choices(q, k, &mut rng)
        })
        .collect()
}

/// An evaluation/shot split: disjoint by id, reproducible from the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub dataset_name: String,
    pub seed: u64,
    pub eval_set: Vec<Question>,
    pub shot_pool: Vec<Question>,
}

/// Samples `eval_n` evaluation questions and `shot_n` shot questions
/// uniformly without replacement. The two sources may be the same slice;
/// the shot draw excludes any id already chosen for evaluation.
pub fn sample_split(
    eval_source: &[Question],
    shot_source: &[Question],
    eval_n: usize,
    shot_n: usize,
    seed: u64,
    dataset_name: &str,
) -> Result<CorpusSplit, CorpusError> {
    if eval_n > eval_source.len() {
        return Err(CorpusError::InsufficientSource {
            requested: eval_n,
            available: eval_source.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xE7A1]));
    let mut eval_idx: Vec<usize> = index::sample(&mut rng, eval_source.len(), eval_n).into_vec();
    eval_idx.sort_unstable();
    let eval_set: Vec<Question> = eval_idx.iter().map(|&i| eval_source[i].clone()).collect();

    let eval_ids: BTreeSet<&str> = eval_set.iter().map(|q| q.id.as_str()).collect();
    let candidates: Vec<usize> = (0..shot_source.len())
        .filter(|&i| !eval_ids.contains(shot_source[i].id.as_str()))
        .collect();
    if shot_n > candidates.len() {
        return Err(CorpusError::InsufficientSource {
            requested: shot_n,
            available: candidates.len(),
        });
    }
    let mut shot_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5807]));
    let mut shot_idx: Vec<usize> = index::sample(&mut shot_rng, candidates.len(), shot_n)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    shot_idx.sort_unstable();
    let shot_pool: Vec<Question> = shot_idx.iter().map(|&i| shot_source[i].clone()).collect();

    Ok(CorpusSplit {
        dataset_name: dataset_name.to_string(),
        seed,
        eval_set,
        shot_pool,
    })
}
