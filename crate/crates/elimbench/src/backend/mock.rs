//! Deterministic in-process backend. Completions realize a scripted policy
//! table keyed by `(question id, strategy, elimination step)`, with optional
//! seeded noise. Responses are a pure function of the prompt, so runs are
//! reproducible regardless of dispatch order.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, CompletionBackend, GenParams, ModelResponse, RequestCapture, TokenUsage,
};
use crate::corpus::Question;
use crate::prompting::Strategy;

/// What the mock answers for one `(question, strategy, step)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockAnswer {
    /// A specific label among the choices currently shown.
    Label(char),
    /// The label currently carrying the gold text; falls back to the first
    /// label when the gold has already been eliminated.
    Gold,
    /// The first label whose text is not the gold text.
    NotGold,
    /// Unparseable text (exercises the no-label path).
    NoAnswer,
    /// A scripted permanent backend failure.
    Fail,
}

/// Scripted behavior: per-cell table, per-strategy defaults, optional noise.
#[derive(Debug, Clone, Default)]
pub struct MockPolicy {
    table: HashMap<(String, Strategy, usize), MockAnswer>,
    default_da: Option<MockAnswer>,
    default_poe: Option<MockAnswer>,
    noise: f64,
    noise_seed: u64,
}

impl MockPolicy {
    /// The same answer for every question, strategy, and step.
    pub fn uniform(answer: MockAnswer) -> Self {
        MockPolicy {
            default_da: Some(answer),
            default_poe: Some(answer),
            ..MockPolicy::default()
        }
    }

    /// Strategy-faithful behavior: the direct strategy names the gold, the
    /// elimination strategy discards a non-gold choice.
    pub fn oracle() -> Self {
        MockPolicy {
            default_da: Some(MockAnswer::Gold),
            default_poe: Some(MockAnswer::NotGold),
            ..MockPolicy::default()
        }
    }

    pub fn with_default(mut self, strategy: Strategy, answer: MockAnswer) -> Self {
        match strategy {
            Strategy::DirectAnswer => self.default_da = Some(answer),
            Strategy::ProcessOfElimination => self.default_poe = Some(answer),
        }
        self
    }

    /// Scripts one `(question, strategy, step)` cell. Step 0 is the full
    /// question; iterative protocols raise the step as choices disappear.
    pub fn script(
        mut self,
        question_id: impl Into<String>,
        strategy: Strategy,
        step: usize,
        answer: MockAnswer,
    ) -> Self {
        self.table.insert((question_id.into(), strategy, step), answer);
        self
    }

    /// With probability `rate`, answer with a different label instead. The
    /// flip decision is a pure function of `(seed, prompt)`.
    pub fn with_noise(mut self, rate: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&rate), "noise rate must lie in [0, 1]");
        self.noise = rate;
        self.noise_seed = seed;
        self
    }

    fn lookup(&self, id: &str, strategy: Strategy, step: usize) -> Option<MockAnswer> {
        self.table
            .get(&(id.to_string(), strategy, step))
            .copied()
            .or(match strategy {
                Strategy::DirectAnswer => self.default_da,
                Strategy::ProcessOfElimination => self.default_poe,
            })
    }
}

/// Config-file description of a mock backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSettings {
    /// `oracle` (DA right, PoE right), `always_gold` (both answer the gold),
    /// or `always_first` (both answer label A).
    pub preset: String,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

/// The parsed tail of an incoming prompt: the query block the model is asked
/// to complete.
#[derive(Debug)]
struct QueryBlock {
    stem: String,
    choices: Vec<(char, String)>,
    strategy: Strategy,
}

fn parse_query_block(prompt: &str) -> Result<QueryBlock, BackendError> {
    // anchor on line starts so stems containing "Question: " cannot mislead
    let start = prompt
        .rfind("\nQuestion: ")
        .map(|p| p + 1)
        .or_else(|| prompt.starts_with("Question: ").then_some(0))
        .ok_or_else(|| BackendError::Permanent("prompt has no question block".into()))?;
    let block = &prompt[start..];
    let mut lines = block.lines();
    let stem = lines
        .next()
        .and_then(|l| l.strip_prefix("Question: "))
        .ok_or_else(|| BackendError::Permanent("malformed question line".into()))?
        .to_string();
    match lines.next() {
        Some("Choices:") => {}
        _ => return Err(BackendError::Permanent("missing Choices: line".into())),
    }
    let mut choices = Vec::new();
    let mut strategy = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix('(') {
            let mut chars = rest.chars();
            let label = chars.next().unwrap_or(' ');
            if chars.next() == Some(')') && label.is_ascii_uppercase() {
                let text = chars.as_str().trim_start().to_string();
                choices.push((label, text));
                continue;
            }
        }
        if line.starts_with("Correct Answer:") {
            strategy = Some(Strategy::DirectAnswer);
            break;
        }
        if line.starts_with("Incorrect Answer:") {
            strategy = Some(Strategy::ProcessOfElimination);
            break;
        }
        return Err(BackendError::Permanent(format!("unexpected prompt line `{line}`")));
    }
    let strategy =
        strategy.ok_or_else(|| BackendError::Permanent("prompt has no answer cue".into()))?;
    if choices.len() < 2 {
        return Err(BackendError::Permanent("query block has fewer than 2 choices".into()));
    }
    Ok(QueryBlock { stem, choices, strategy })
}

/// Deterministic backend for tests and offline runs.
pub struct MockBackend {
    id: String,
    policy: MockPolicy,
    by_stem: HashMap<String, Vec<Question>>,
    /// Raw label-token weights per question id, for the scoring surfaces.
    label_weights: HashMap<String, BTreeMap<char, f64>>,
    calls: AtomicUsize,
    capture: Option<RequestCapture>,
}

impl MockBackend {
    pub fn new(name: &str, policy: MockPolicy, questions: &[Question]) -> Self {
        let mut by_stem: HashMap<String, Vec<Question>> = HashMap::new();
        for q in questions {
            by_stem.entry(q.stem.clone()).or_default().push(q.clone());
        }
        MockBackend {
            id: format!("mock:{name}"),
            policy,
            by_stem,
            label_weights: HashMap::new(),
            calls: AtomicUsize::new(0),
            capture: None,
        }
    }

    pub fn from_settings(
        name: &str,
        settings: MockSettings,
        questions: &[Question],
    ) -> Result<Self, BackendError> {
        let policy = match settings.preset.as_str() {
            "oracle" => MockPolicy::oracle(),
            "always_gold" => MockPolicy::uniform(MockAnswer::Gold),
            "always_first" => MockPolicy::uniform(MockAnswer::Label('A')),
            other => {
                return Err(BackendError::InvalidSpec(format!("unknown mock preset `{other}`")))
            }
        };
        let policy = if settings.noise > 0.0 {
            policy.with_noise(settings.noise, settings.noise_seed)
        } else {
            policy
        };
        Ok(MockBackend::new(name, policy, questions))
    }

    pub fn with_capture(mut self, capture: RequestCapture) -> Self {
        self.capture = Some(capture);
        self
    }

    /// Registers raw token weights used by the probability surfaces. Keys
    /// outside the question's labels model mass on unrelated tokens.
    pub fn set_label_weights(&mut self, question_id: &str, weights: BTreeMap<char, f64>) {
        self.label_weights.insert(question_id.to_string(), weights);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// The registered question whose stem matches and whose choice texts
    /// cover the texts shown in the query block.
    fn resolve(&self, block: &QueryBlock) -> Result<&Question, BackendError> {
        let candidates = self
            .by_stem
            .get(&block.stem)
            .ok_or_else(|| BackendError::UnmappedQuestion(format!("stem `{}`", block.stem)))?;
        let mut matches: Vec<&Question> = candidates
            .iter()
            .filter(|q| {
                block.choices.iter().all(|(_, text)| {
                    q.choices.iter().any(|c| &c.text == text)
                })
            })
            .collect();
        matches.sort_by(|a, b| a.id.cmp(&b.id));
        matches
            .first()
            .copied()
            .ok_or_else(|| BackendError::UnmappedQuestion(format!("stem `{}`", block.stem)))
    }

    fn answer_label(
        &self,
        answer: MockAnswer,
        block: &QueryBlock,
        q: &Question,
    ) -> Result<Option<char>, BackendError> {
        let gold_text = q.gold_text();
        let label = match answer {
            MockAnswer::NoAnswer => return Ok(None),
            MockAnswer::Fail => {
                return Err(BackendError::Permanent(format!(
                    "scripted failure for question `{}`",
                    q.id
                )))
            }
            MockAnswer::Label(l) => {
                if !block.choices.iter().any(|(label, _)| *label == l) {
                    return Err(BackendError::UnmappedQuestion(format!(
                        "scripted label `{l}` not among shown choices of `{}`",
                        q.id
                    )));
                }
                l
            }
            MockAnswer::Gold => block
                .choices
                .iter()
                .find(|(_, text)| text == gold_text)
                .map(|(l, _)| *l)
                .unwrap_or(block.choices[0].0),
            MockAnswer::NotGold => block
                .choices
                .iter()
                .find(|(_, text)| text != gold_text)
                .map(|(l, _)| *l)
                .unwrap_or(block.choices[0].0),
        };
        Ok(Some(label))
    }

    fn apply_noise(&self, label: char, block: &QueryBlock, prompt: &str) -> char {
        if self.policy.noise <= 0.0 {
            return label;
        }
        let mut hash = self.policy.noise_seed;
        for b in prompt.bytes() {
            hash = hash.wrapping_mul(0x100000001b3).wrapping_add(b as u64);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hash);
        if rng.random::<f64>() >= self.policy.noise {
            return label;
        }
        let others: Vec<char> = block
            .choices
            .iter()
            .map(|(l, _)| *l)
            .filter(|&l| l != label)
            .collect();
        if others.is_empty() {
            label
        } else {
            others[rng.random_range(0..others.len())]
        }
    }
}

impl CompletionBackend for MockBackend {
    fn backend_id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, prompt: &str, params: &GenParams) -> Result<ModelResponse, BackendError> {
        params.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(capture) = &self.capture {
            capture.lock().unwrap().push(prompt.to_string());
        }
        let block = parse_query_block(prompt)?;
        let q = self.resolve(&block)?;
        let step = q.choice_count().saturating_sub(block.choices.len());
        let answer = self
            .policy
            .lookup(&q.id, block.strategy, step)
            .ok_or_else(|| {
                BackendError::UnmappedQuestion(format!(
                    "id `{}` strategy {} step {step}",
                    q.id, block.strategy
                ))
            })?;
        let text = match self.answer_label(answer, &block, q)? {
            None => "no determination could be made.".to_string(),
            Some(label) => {
                let label = self.apply_noise(label, &block, prompt);
                let text = &block
                    .choices
                    .iter()
                    .find(|(l, _)| *l == label)
                    .expect("label came from the shown choices")
                    .1;
                format!(
                    "So the {} answer is \"{}\" which is choice ({})",
                    block.strategy.adjective(),
                    text,
                    label
                )
            }
        };
        let label_probs = self.label_weights.get(&q.id).and_then(|weights| {
            let shown: Vec<char> = block.choices.iter().map(|(l, _)| *l).collect();
            let shown_weights: BTreeMap<char, f64> = weights
                .iter()
                .filter(|(l, _)| shown.contains(l))
                .map(|(l, w)| (*l, *w))
                .collect();
            let total: f64 = shown_weights.values().sum();
            (total > 0.0).then(|| {
                shown_weights.into_iter().map(|(l, w)| (l, w / total)).collect()
            })
        });
        Ok(ModelResponse {
            text,
            label_probs,
            latency_ms: 0.0,
            token_usage: TokenUsage::default(),
            backend_id: self.id.clone(),
        })
    }

    fn label_logprobs(
        &self,
        prompt: &str,
        _params: &GenParams,
    ) -> Result<Option<BTreeMap<char, f64>>, BackendError> {
        let block = parse_query_block(prompt)?;
        let q = self.resolve(&block)?;
        let Some(weights) = self.label_weights.get(&q.id) else {
            return Ok(None);
        };
        let total: f64 = weights.values().sum();
        Ok(Some(
            weights.iter().map(|(l, w)| (*l, (w / total).ln())).collect(),
        ))
    }

    fn score_continuation(
        &self,
        prompt: &str,
        continuation: &str,
    ) -> Result<Option<f64>, BackendError> {
        let block = parse_query_block(prompt)?;
        let q = self.resolve(&block)?;
        let Some(weights) = self.label_weights.get(&q.id) else {
            return Ok(None);
        };
        let label = continuation
            .chars()
            .find(char::is_ascii_uppercase)
            .ok_or_else(|| {
                BackendError::Permanent(format!("continuation `{continuation}` has no label"))
            })?;
        let total: f64 = weights.values().sum();
        let w = weights.get(&label).copied().unwrap_or(0.0);
        Ok(Some((w / total).max(1e-300).ln()))
    }
}
