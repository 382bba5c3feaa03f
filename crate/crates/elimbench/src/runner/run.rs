//! Experiment execution: split sampling, prompt construction, cached
//! dispatch over a bounded worker pool, and record persistence.
//!
//! Dispatch order never shows in the artifacts: results are sorted by
//! question id (then cell, repeat, width) before the record is assembled.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::backend::{CompletionBackend, GenParams};
use crate::corpus::{
    derive_seed, load_dataset, load_shot_fixtures, reduce_eval_set, sample_split, DatasetSchema,
    Question, ShotFixture,
};
use crate::hashing::sha256_hex;
use crate::iterative::{run_iterative, EliminationTrace};
use crate::parsing::{extract_answer, to_prediction, Prediction};
use crate::prompting::{
    build_prompt, build_shot_examples, lint_poe_rationales, template_shot_examples, Mode,
    Strategy, StrategyCell, StrategyConfig,
};
use crate::runner::record::{CachedBackend, CompletionCache, RunRecord, Transcript};
use crate::runner::{ExperimentConfig, RunnerError};

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn load_fixtures(cfg: &ExperimentConfig) -> Result<Vec<ShotFixture>, RunnerError> {
    if cfg.schema == DatasetSchema::Canonical {
        Ok(load_shot_fixtures(&cfg.shot_data)?)
    } else {
        let questions = load_dataset(&cfg.shot_data, cfg.schema)?;
        Ok(questions
            .into_iter()
            .map(|question| ShotFixture {
                question,
                rationale_da: None,
                rationale_poe: None,
                poe_answer: None,
            })
            .collect())
    }
}

struct Job {
    cell_index: usize,
    repeat: usize,
    question_index: usize,
}

/// The exact questions a config evaluates: the seeded split's evaluation
/// half, reduced to `reduce_k` choices unless the run is iterative (the
/// iterative protocol reduces by elimination instead).
pub fn resolve_eval_questions(cfg: &ExperimentConfig) -> Result<Vec<Question>, RunnerError> {
    let eval_source = load_dataset(&cfg.eval_data, cfg.schema)?;
    let fixtures = load_fixtures(cfg)?;
    let fixture_questions: Vec<Question> = fixtures.iter().map(|f| f.question.clone()).collect();
    let split = sample_split(
        &eval_source,
        &fixture_questions,
        cfg.eval_n,
        cfg.shot_n,
        cfg.seed,
        &cfg.dataset_name,
    )?;
    if cfg.iterative {
        Ok(split.eval_set)
    } else {
        Ok(reduce_eval_set(
            &split.eval_set,
            cfg.reduce_k,
            derive_seed(cfg.seed, &[0x0EDC]),
        )?)
    }
}

/// Runs every requested strategy/mode/repeat cell over the sampled split.
/// Completions are served from the cache when the same config ran before;
/// a completed experiment replays without any backend call. On backend
/// failure the partial record is persisted with an incompleteness marker
/// and returned inside the error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord, RunnerError> {
    cfg.validate()?;
    let eval_questions = resolve_eval_questions(cfg)?;
    let backend = cfg.backend.build(&eval_questions)?;
    run_experiment_with_backend(cfg, backend.as_ref())
}

/// [`run_experiment`] against a caller-supplied backend, for tests and
/// embedders that need to observe or customize it.
pub fn run_experiment_with_backend(
    cfg: &ExperimentConfig,
    backend: &dyn CompletionBackend,
) -> Result<RunRecord, RunnerError> {
    cfg.validate()?;
    let started_unix = now_unix();
    let config_hash = cfg.config_hash();

    let eval_source = load_dataset(&cfg.eval_data, cfg.schema)?;
    let fixtures = load_fixtures(cfg)?;
    let fixture_questions: Vec<Question> =
        fixtures.iter().map(|f| f.question.clone()).collect();
    let split = sample_split(
        &eval_source,
        &fixture_questions,
        cfg.eval_n,
        cfg.shot_n,
        cfg.seed,
        &cfg.dataset_name,
    )?;
    let selected_fixtures: Vec<ShotFixture> = split
        .shot_pool
        .iter()
        .map(|q| {
            fixtures
                .iter()
                .find(|f| f.question.id == q.id)
                .expect("sampled shot comes from the fixture list")
                .clone()
        })
        .collect();
    let lint_warnings = lint_poe_rationales(&selected_fixtures);

    // The iterative protocol reduces by elimination; the 2-choice core
    // protocol reduces up front.
    let eval_questions = if cfg.iterative {
        split.eval_set.clone()
    } else {
        reduce_eval_set(&split.eval_set, cfg.reduce_k, derive_seed(cfg.seed, &[0x0EDC]))?
    };

    let params = cfg.gen_params();
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| RunnerError::Io {
        path: cfg.output_dir.display().to_string(),
        source,
    })?;
    let cache_path = cfg.output_dir.join(format!("{}.cache.jsonl", cfg.run_id()));
    let cache = Mutex::new(CompletionCache::open(&cache_path)?);

    let mut transcripts: Vec<Transcript> = Vec::new();
    let mut traces: Vec<EliminationTrace> = Vec::new();
    let mut failures: Vec<String> = Vec::new();

    if cfg.iterative {
        run_iterative_phase(
            cfg,
            &eval_questions,
            &selected_fixtures,
            backend,
            &cache,
            &params,
            &mut transcripts,
            &mut traces,
            &mut failures,
        )?;
    } else {
        run_cell_phase(
            cfg,
            &eval_questions,
            &selected_fixtures,
            backend,
            &cache,
            &params,
            &mut transcripts,
            &mut failures,
        )?;
    }

    transcripts.sort_by_key(Transcript::sort_key);
    traces.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let complete = failures.is_empty();
    let incomplete_reason = (!complete).then(|| failures.join("; "));
    let record = RunRecord {
        config_hash,
        dataset_name: cfg.dataset_name.clone(),
        backend_id: backend.backend_id(),
        started_unix,
        finished_unix: now_unix(),
        complete,
        incomplete_reason: incomplete_reason.clone(),
        parse_failure_rate: RunRecord::parse_failure_rate_of(&transcripts),
        lint_warnings,
        eval_questions,
        transcripts,
        traces,
    };
    let record_path = cfg.output_dir.join(format!("{}.record.json", cfg.run_id()));
    record.save(&record_path)?;

    match incomplete_reason {
        None => Ok(record),
        Some(reason) => Err(RunnerError::Incomplete {
            reason,
            path: record_path.display().to_string(),
            record: Box::new(record),
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_cell_phase(
    cfg: &ExperimentConfig,
    eval_questions: &[Question],
    fixtures: &[ShotFixture],
    backend: &dyn CompletionBackend,
    cache: &Mutex<CompletionCache>,
    params: &GenParams,
    transcripts: &mut Vec<Transcript>,
    failures: &mut Vec<String>,
) -> Result<(), RunnerError> {
    let mut cell_configs: Vec<(StrategyCell, StrategyConfig)> = Vec::new();
    for &cell in &cfg.strategies {
        let cfg_cell = if cfg.shot_n == 0 {
            StrategyConfig::zero_shot(cell.strategy, cell.mode)
        } else {
            let shots = build_shot_examples(
                fixtures,
                cell.strategy,
                cell.mode,
                cfg.reduce_k,
                derive_seed(cfg.seed, &[0x5807]),
            )?;
            StrategyConfig::new(cell.strategy, cell.mode, shots)?
        };
        cell_configs.push((cell, cfg_cell));
    }

    let mut jobs = Vec::new();
    for (cell_index, _) in cell_configs.iter().enumerate() {
        for repeat in 0..cfg.repeats {
            for question_index in 0..eval_questions.len() {
                jobs.push(Job { cell_index, repeat, question_index });
            }
        }
    }

    let results: Vec<Option<Result<Transcript, String>>> = {
        let slots: Vec<Mutex<Option<Result<Transcript, String>>>> =
            (0..jobs.len()).map(|_| Mutex::new(None)).collect();
        let cursor = AtomicUsize::new(0);
        let workers = cfg.parallelism.min(jobs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let job = &jobs[i];
                    let (cell, cell_cfg) = &cell_configs[job.cell_index];
                    let q = &eval_questions[job.question_index];
                    let outcome = execute_job(cell_cfg, q, backend, cache, params, job.repeat)
                        .map_err(|e| format!("{} {} repeat {}: {e}", q.id, cell, job.repeat));
                    *slots[i].lock().unwrap() = Some(outcome);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().unwrap()).collect()
    };

    for outcome in results.into_iter().flatten() {
        match outcome {
            Ok(t) => transcripts.push(t),
            Err(e) => failures.push(e),
        }
    }
    Ok(())
}

fn execute_job(
    cell_cfg: &StrategyConfig,
    q: &Question,
    backend: &dyn CompletionBackend,
    cache: &Mutex<CompletionCache>,
    params: &GenParams,
    repeat: usize,
) -> Result<Transcript, RunnerError> {
    let prompt = build_prompt(cell_cfg, q)?;
    let cached = CachedBackend::new(backend, cache, params, repeat);
    let resp = cached.complete(&prompt, params)?;
    let prediction = to_prediction(&resp, q, cell_cfg.strategy, cell_cfg.mode);
    Ok(Transcript {
        question_id: q.id.clone(),
        strategy: cell_cfg.strategy,
        mode: cell_cfg.mode,
        repeat,
        width: None,
        prompt_hash: sha256_hex(prompt.as_bytes()),
        raw_completion: resp.text,
        prediction,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_iterative_phase(
    cfg: &ExperimentConfig,
    eval_questions: &[Question],
    fixtures: &[ShotFixture],
    backend: &dyn CompletionBackend,
    cache: &Mutex<CompletionCache>,
    params: &GenParams,
    transcripts: &mut Vec<Transcript>,
    traces: &mut Vec<EliminationTrace>,
    failures: &mut Vec<String>,
) -> Result<(), RunnerError> {
    let modes: Vec<Mode> = [Mode::Base, Mode::Cot]
        .into_iter()
        .filter(|&mode| {
            let has = |s| cfg.strategies.contains(&StrategyCell { strategy: s, mode });
            has(Strategy::DirectAnswer) && has(Strategy::ProcessOfElimination)
        })
        .collect();
    if modes.is_empty() {
        return Err(RunnerError::Config(
            "iterative runs need both the direct and elimination cell of a mode".into(),
        ));
    }

    for mode in modes {
        let shot_seed = derive_seed(cfg.seed, &[0x5807]);
        let (da_cfg, poe_cfg) = if cfg.shot_n == 0 {
            (
                StrategyConfig::zero_shot(Strategy::DirectAnswer, mode),
                StrategyConfig::zero_shot(Strategy::ProcessOfElimination, mode),
            )
        } else {
            (
                StrategyConfig::new(
                    Strategy::DirectAnswer,
                    mode,
                    template_shot_examples(fixtures, Strategy::DirectAnswer, mode, shot_seed)?,
                )?,
                StrategyConfig::new(
                    Strategy::ProcessOfElimination,
                    mode,
                    template_shot_examples(
                        fixtures,
                        Strategy::ProcessOfElimination,
                        mode,
                        shot_seed,
                    )?,
                )?,
            )
        };

        let results: Vec<Mutex<Option<Result<EliminationTrace, String>>>> =
            (0..eval_questions.len()).map(|_| Mutex::new(None)).collect();
        let cursor = AtomicUsize::new(0);
        let workers = cfg.parallelism.min(eval_questions.len().max(1));
        let cached = CachedBackend::new(backend, cache, params, 0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::SeqCst);
                    if i >= eval_questions.len() {
                        break;
                    }
                    let q = &eval_questions[i];
                    let outcome = run_iterative(q, &poe_cfg, &da_cfg, &cached, params, cfg.seed)
                        .map_err(|e| format!("{} iterative {mode}: {e}", q.id));
                    *results[i].lock().unwrap() = Some(outcome);
                });
            }
        });

        for slot in results {
            match slot.into_inner().unwrap() {
                Some(Ok(trace)) => {
                    transcripts.extend(trace_transcripts(&trace));
                    traces.push(trace);
                }
                Some(Err(e)) => failures.push(e),
                None => {}
            }
        }
    }
    Ok(())
}

/// Per-width transcripts synthesized from a trace.
fn trace_transcripts(trace: &EliminationTrace) -> Vec<Transcript> {
    let mut out = Vec::new();
    for (&width, prediction) in &trace.da_at_width {
        out.push(Transcript {
            question_id: trace.question_id.clone(),
            strategy: Strategy::DirectAnswer,
            mode: trace.mode,
            repeat: 0,
            width: Some(width),
            prompt_hash: trace
                .da_prompt_hashes
                .get(&width)
                .cloned()
                .unwrap_or_default(),
            raw_completion: prediction.raw_text.clone(),
            prediction: prediction.clone(),
        });
    }
    for step in &trace.steps {
        let width = step.remaining_before.len();
        let labels: Vec<char> = step.remaining_before.iter().map(|c| c.label).collect();
        let extraction = extract_answer(&step.raw_text, &labels, trace.mode);
        let prediction = Prediction {
            question_id: trace.question_id.clone(),
            strategy: Strategy::ProcessOfElimination,
            mode: trace.mode,
            chosen_label: extraction.label,
            rationale: extraction.rationale,
            parse_status: extraction.status,
            raw_text: step.raw_text.clone(),
        };
        out.push(Transcript {
            question_id: trace.question_id.clone(),
            strategy: Strategy::ProcessOfElimination,
            mode: trace.mode,
            repeat: 0,
            width: Some(width),
            prompt_hash: step.prompt_hash.clone(),
            raw_completion: step.raw_text.clone(),
            prediction,
        });
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendKind, BackendSpec, MockBackend, MockPolicy, MockSettings, RetryPolicy};
    use crate::metrics::{accuracy, question_index};
    use crate::parsing::ParseStatus;

    fn data_path(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
    }

    fn sample_config(dir: &std::path::Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset_name: "sample".into(),
            eval_data: data_path("sample_questions.jsonl"),
            shot_data: data_path("sample_shots.jsonl"),
            schema: DatasetSchema::Canonical,
            reduce_k: 2,
            eval_n: 20,
            shot_n: 10,
            seed: 7,
            backend: BackendSpec {
                kind: BackendKind::Mock,
                endpoint_url: None,
                model_name: "demo".into(),
                auth_env: None,
                rate_limit: None,
                retry: RetryPolicy::default(),
                mock: Some(MockSettings { preset: "oracle".into(), noise: 0.0, noise_seed: 0 }),
            },
            strategies: vec![
                "da_base".parse().unwrap(),
                "poe_base".parse().unwrap(),
                "da_cot".parse().unwrap(),
                "poe_cot".parse().unwrap(),
            ],
            repeats: 2,
            iterative: false,
            parallelism: 4,
            output_dir: dir.to_path_buf(),
            temperature: None,
            max_tokens: None,
        }
    }

    #[test]
    fn oracle_mock_scores_one_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sample_config(dir.path());
        let record = run_experiment(&cfg).unwrap();
        assert!(record.complete);
        assert_eq!(record.transcripts.len(), 20 * 4 * 2);
        assert_eq!(record.parse_failure_rate, 0.0);
        let index = question_index(&record.eval_questions);
        for cell in &cfg.strategies {
            let preds: Vec<_> = record
                .cell_predictions(cell.strategy, cell.mode, 0)
                .into_iter()
                .cloned()
                .collect();
            assert_eq!(preds.len(), 20);
            assert_eq!(accuracy(&preds, &index).unwrap(), 1.0, "cell {cell}");
        }
        let report = crate::runner::emit_report(
            std::slice::from_ref(&record),
            &record.eval_questions,
        )
        .unwrap();
        for row in &report.consistency {
            assert_eq!(row.agreement_da_poe, Some(1.0));
            assert_eq!(row.self_consistency_da, Some(1.0));
            assert_eq!(row.self_consistency_poe, Some(1.0));
        }
    }

    #[test]
    fn identical_configs_replay_from_cache_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sample_config(dir.path());
        let eval_questions = resolve_eval_questions(&cfg).unwrap();
        let mock = MockBackend::new("demo", MockPolicy::oracle(), &eval_questions);
        let first = run_experiment_with_backend(&cfg, &mock).unwrap();
        let calls_after_first = mock.calls();
        assert!(calls_after_first > 0);
        let second = run_experiment_with_backend(&cfg, &mock).unwrap();
        assert_eq!(mock.calls(), calls_after_first, "replay issued zero backend calls");
        assert_eq!(first.canonical_bytes(), second.canonical_bytes());
    }

    #[test]
    fn scripted_failure_yields_partial_record_with_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sample_config(dir.path());
        cfg.strategies = vec!["da_base".parse().unwrap()];
        cfg.repeats = 1;
        let eval_questions = resolve_eval_questions(&cfg).unwrap();
        let failing_id = eval_questions[3].id.clone();
        let policy = MockPolicy::oracle().script(
            failing_id.clone(),
            Strategy::DirectAnswer,
            0,
            crate::backend::MockAnswer::Fail,
        );
        let mock = MockBackend::new("demo", policy, &eval_questions);
        let err = run_experiment_with_backend(&cfg, &mock).unwrap_err();
        match err {
            RunnerError::Incomplete { reason, path, record } => {
                assert!(reason.contains(&failing_id));
                assert!(!record.complete);
                assert_eq!(record.transcripts.len(), 19);
                let reloaded = RunRecord::load(std::path::Path::new(&path)).unwrap();
                assert!(!reloaded.complete);
                assert!(reloaded.incomplete_reason.is_some());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn iterative_run_produces_traces_and_width_transcripts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sample_config(dir.path());
        cfg.strategies = vec!["da_base".parse().unwrap(), "poe_base".parse().unwrap()];
        cfg.iterative = true;
        cfg.eval_n = 6;
        let record = run_experiment(&cfg).unwrap();
        assert_eq!(record.traces.len(), 6);
        // every question is 5-choice: 4 DA widths + 3 elimination steps
        assert_eq!(record.transcripts.len(), 6 * (4 + 3));
        assert!(record.transcripts.iter().all(|t| t.width.is_some()));
        let report = crate::runner::emit_report(
            std::slice::from_ref(&record),
            &record.eval_questions,
        )
        .unwrap();
        assert_eq!(report.iterative.len(), 4, "one row per width");
        assert!(report.iterative.iter().all(|r| r.raw_accuracy == 1.0));
    }

    #[test]
    fn noisy_mock_parse_rate_stays_auditable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sample_config(dir.path());
        cfg.strategies = vec!["da_base".parse().unwrap()];
        cfg.repeats = 1;
        let eval_questions = resolve_eval_questions(&cfg).unwrap();
        let policy = MockPolicy::uniform(crate::backend::MockAnswer::NoAnswer);
        let mock = MockBackend::new("demo", policy, &eval_questions);
        let record = run_experiment_with_backend(&cfg, &mock).unwrap();
        assert_eq!(record.parse_failure_rate, 1.0);
        assert!(record
            .transcripts
            .iter()
            .all(|t| t.prediction.parse_status == ParseStatus::NoLabel));
    }
}
