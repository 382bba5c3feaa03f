//! Run a complete experiment against the deterministic mock backend and
//! print the report tables. No network involved.
//!
//! ```bash
//! cargo run -p elimbench --example mock_experiment
//! ```

use elimbench::backend::{BackendKind, BackendSpec, MockSettings, RetryPolicy};
use elimbench::corpus::DatasetSchema;
use elimbench::runner::{emit_report, run_experiment, ExperimentConfig};

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
        eval_n: 30,
        shot_n: 10,
        seed: 7,
        backend: BackendSpec {
            kind: BackendKind::Mock,
            endpoint_url: None,
            model_name: "demo".into(),
            auth_env: None,
            rate_limit: None,
            retry: RetryPolicy::default(),
            // 15% of answers flip to a wrong label, seeded and reproducible
            mock: Some(MockSettings { preset: "oracle".into(), noise: 0.1, noise_seed: 5 }),
        },
        strategies: vec![
            "da_base".parse()?,
            "poe_base".parse()?,
            "da_cot".parse()?,
            "poe_cot".parse()?,
        ],
        repeats: 2,
        iterative: false,
        parallelism: 4,
        output_dir: out.path().to_path_buf(),
        temperature: None,
        max_tokens: None,
    };

    let record = run_experiment(&cfg)?;
    println!(
        "executed {} transcripts against {} (parse failure rate {:.3})\n",
        record.transcripts.len(),
        record.backend_id,
        record.parse_failure_rate
    );
    let doc = emit_report(std::slice::from_ref(&record), &record.eval_questions)?;
    print!("{}", doc.to_markdown());
    println!("\nCSV (accuracy table):\n{}", doc.accuracy_csv());
    Ok(())
}
