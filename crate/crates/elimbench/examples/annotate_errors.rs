//! Store manual error-category annotations against a run record and print
//! the category histogram. The taxonomy is closed; the harness never assigns
//! categories itself.
//!
//! ```bash
//! cargo run -p elimbench --example annotate_errors
//! ```

use elimbench::backend::{BackendKind, BackendSpec, MockSettings, RetryPolicy};
use elimbench::corpus::DatasetSchema;
use elimbench::runner::{
    annotate_errors, run_experiment, ErrorAnnotation, ErrorCategory, ExperimentConfig,
};

fn data(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = tempfile::tempdir()?;
    let cfg = ExperimentConfig {
        dataset_name: "sample".into(),
        eval_data: data("sample_questions.jsonl"),
        shot_data: data("sample_shots.jsonl"),
        schema: DatasetSchema::Canonical,
        reduce_k: 2,
        eval_n: 10,
        shot_n: 10,
        seed: 3,
        backend: BackendSpec {
            kind: BackendKind::Mock,
            endpoint_url: None,
            model_name: "demo".into(),
            auth_env: None,
            rate_limit: None,
            retry: RetryPolicy::default(),
            mock: Some(MockSettings { preset: "always_gold".into(), noise: 0.0, noise_seed: 0 }),
        },
        strategies: vec!["poe_cot".parse()?],
        repeats: 1,
        iterative: false,
        parallelism: 2,
        output_dir: out.path().to_path_buf(),
        temperature: None,
        max_tokens: None,
    };
    // `always_gold` makes the elimination strategy discard the gold choice
    // everywhere: a run full of failures worth annotating.
    let record = run_experiment(&cfg)?;

    let mut annotations = Vec::new();
    let categories = [
        ErrorCategory::MisalignedRationale,
        ErrorCategory::MisalignedRationale,
        ErrorCategory::ReasoningError,
        ErrorCategory::ReasoningError,
        ErrorCategory::ReasoningError,
        ErrorCategory::NoBreakdown,
        ErrorCategory::Hallucination,
        ErrorCategory::PoeNotApplicable,
        ErrorCategory::DatasetIssue,
        ErrorCategory::ReasoningError,
    ];
    for (q, &category) in record.eval_questions.iter().zip(categories.iter()) {
        annotations.push(ErrorAnnotation {
            question_id: q.id.clone(),
            category,
            annotator: "reviewer-1".into(),
            note: "demo annotation".into(),
        });
    }

    let store = out.path().join("annotations.jsonl");
    let summary = annotate_errors(&record, &annotations, &store)?;
    println!(
        "stored {} annotations ({} effective)\n",
        summary.history_len,
        summary.effective.len()
    );
    println!("{:<22} {:>5} {:>8}", "category", "count", "fraction");
    for category in ErrorCategory::ALL {
        println!(
            "{:<22} {:>5} {:>8.2}",
            format!("{category:?}"),
            summary.histogram.get(&category).copied().unwrap_or(0),
            summary.fraction(category)
        );
    }

    // Latest annotation wins per (question, annotator); history is retained.
    let revised = ErrorAnnotation {
        question_id: record.eval_questions[0].id.clone(),
        category: ErrorCategory::DatasetIssue,
        annotator: "reviewer-1".into(),
        note: "revised on second look".into(),
    };
    let summary = annotate_errors(&record, &[revised], &store)?;
    println!(
        "\nafter one revision: history {} entries, {} effective, MisalignedRationale now {}",
        summary.history_len,
        summary.effective.len(),
        summary.histogram.get(&ErrorCategory::MisalignedRationale).copied().unwrap_or(0)
    );
    Ok(())
}
