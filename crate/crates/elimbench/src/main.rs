//! Command-line front end. Every subcommand is a thin wrapper over the
//! library; see the crate examples for programmatic use.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use elimbench::corpus::{
    derive_seed, load_dataset, load_shot_fixtures, reduce_eval_set, sample_split, DatasetSchema,
};
use elimbench::prompting::lint_poe_rationales;
use elimbench::runner::{
    annotate_errors, emit_report, load_annotations, run_experiment, ErrorAnnotation,
    ExperimentConfig, RunRecord, RunnerError,
};

#[derive(Parser)]
#[command(
    name = "elimbench",
    about = "Benchmark direct-answer vs. elimination prompting on multiple-choice questions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build split fixtures: sample an evaluation set and shot pool, reduce
    /// the evaluation questions, and write both as record streams.
    Prepare {
        /// Evaluation question file.
        #[arg(long)]
        eval_data: PathBuf,
        /// Shot fixture file (canonical schema with rationale fields).
        #[arg(long)]
        shot_data: PathBuf,
        #[arg(long, default_value = "canonical")]
        schema: String,
        #[arg(long, default_value_t = 500)]
        eval_n: usize,
        #[arg(long, default_value_t = 10)]
        shot_n: usize,
        #[arg(long, default_value_t = 2)]
        reduce_k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute an experiment config and persist the run record.
    Run {
        /// TOML config mirroring the experiment settings.
        #[arg(long)]
        config: PathBuf,
    },
    /// Render accuracy/consistency/iterative tables from run records.
    Report {
        /// One or more run record files (same dataset).
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        /// Output directory for report.md and the CSV tables.
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired-run agreement and self-consistency analysis.
    Consistency {
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
    },
    /// Run the iterative elimination protocol (forces the iterative flag).
    Iterate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Store manual error-category annotations and print the histogram.
    Annotate {
        /// Run record the annotations refer to.
        #[arg(long)]
        record: PathBuf,
        /// Annotation file: one JSON object per line with question_id,
        /// category, annotator, note.
        #[arg(long)]
        annotations: PathBuf,
        /// Annotation store (append-only). Defaults to the record path with
        /// an .annotations.jsonl suffix.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { eval_data, shot_data, schema, eval_n, shot_n, reduce_k, seed, out } => {
            prepare(eval_data, shot_data, &schema, eval_n, shot_n, reduce_k, seed, out)
        }
        Command::Run { config } => run(config, false),
        Command::Iterate { config } => run(config, true),
        Command::Report { records, out } => report(records, out),
        Command::Consistency { records } => consistency(records),
        Command::Annotate { record, annotations, store } => annotate(record, annotations, store),
    }
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    eval_data: PathBuf,
    shot_data: PathBuf,
    schema: &str,
    eval_n: usize,
    shot_n: usize,
    reduce_k: usize,
    seed: u64,
    out: PathBuf,
) -> Result<()> {
    let schema: DatasetSchema = schema.parse()?;
    let eval_source = load_dataset(&eval_data, schema)?;
    let fixtures = if schema == DatasetSchema::Canonical {
        load_shot_fixtures(&shot_data)?
    } else {
        load_dataset(&shot_data, schema)?
            .into_iter()
            .map(|question| elimbench::corpus::ShotFixture {
                question,
                rationale_da: None,
                rationale_poe: None,
                poe_answer: None,
            })
            .collect()
    };
    let fixture_questions: Vec<_> = fixtures.iter().map(|f| f.question.clone()).collect();
    let split = sample_split(&eval_source, &fixture_questions, eval_n, shot_n, seed, "prepared")?;
    let reduced = reduce_eval_set(&split.eval_set, reduce_k, derive_seed(seed, &[0x0EDC]))?;

    for warning in lint_poe_rationales(&fixtures) {
        eprintln!("lint: {warning}");
    }

    std::fs::create_dir_all(&out)?;
    let eval_path = out.join("eval.jsonl");
    let mut eval_lines = String::new();
    for q in &reduced {
        let texts: Vec<&str> = q.choices.iter().map(|c| c.text.as_str()).collect();
        let record = serde_json::json!({
            "id": q.id,
            "question": q.stem,
            "choices": texts,
            "gold": q.gold_index(),
        });
        eval_lines.push_str(&record.to_string());
        eval_lines.push('\n');
    }
    std::fs::write(&eval_path, eval_lines)?;

    let shots_path = out.join("shots.jsonl");
    let mut shot_lines = String::new();
    for q in &split.shot_pool {
        let fx = fixtures
            .iter()
            .find(|f| f.question.id == q.id)
            .expect("shot pool comes from fixtures");
        let texts: Vec<&str> = q.choices.iter().map(|c| c.text.as_str()).collect();
        let record = serde_json::json!({
            "id": q.id,
            "question": q.stem,
            "choices": texts,
            "gold": q.gold_index(),
            "rationale_da": fx.rationale_da,
            "rationale_poe": fx.rationale_poe,
            "poe_answer": fx.poe_answer,
        });
        shot_lines.push_str(&record.to_string());
        shot_lines.push('\n');
    }
    std::fs::write(&shots_path, shot_lines)?;

    println!(
        "prepared {} evaluation questions ({}-choice) -> {}",
        reduced.len(),
        reduce_k,
        eval_path.display()
    );
    println!(
        "prepared {} shot fixtures -> {}",
        split.shot_pool.len(),
        shots_path.display()
    );
    Ok(())
}

fn run(config: PathBuf, force_iterative: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_path(&config)?;
    if force_iterative {
        cfg.iterative = true;
    }
    match run_experiment(&cfg) {
        Ok(record) => {
            for warning in &record.lint_warnings {
                eprintln!("lint: {warning}");
            }
            println!(
                "run {} complete: {} transcripts, parse failure rate {:.3}",
                cfg.run_id(),
                record.transcripts.len(),
                record.parse_failure_rate
            );
            let doc = emit_report(std::slice::from_ref(&record), &record.eval_questions)?;
            print!("{}", doc.to_markdown());
            println!(
                "record: {}",
                cfg.output_dir.join(format!("{}.record.json", cfg.run_id())).display()
            );
            Ok(())
        }
        Err(RunnerError::Incomplete { reason, path, .. }) => {
            bail!("experiment incomplete ({reason}); partial record persisted at {path}")
        }
        Err(e) => Err(e.into()),
    }
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    paths
        .iter()
        .map(|p| RunRecord::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn report(records: Vec<PathBuf>, out: PathBuf) -> Result<()> {
    let records = load_records(&records)?;
    let questions = records[0].eval_questions.clone();
    let doc = emit_report(&records, &questions)?;
    print!("{}", doc.to_markdown());
    let written = doc.write_all(&out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn consistency(records: Vec<PathBuf>) -> Result<()> {
    let records = load_records(&records)?;
    let questions = records[0].eval_questions.clone();
    let doc = emit_report(&records, &questions)?;
    if doc.consistency.is_empty() {
        bail!("no strategy pairs found; consistency needs both cells of a mode");
    }
    println!("# Consistency: {}", doc.dataset_name);
    for row in &doc.consistency {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{} {}: agreement {} | self-consistency DA {} PoE {} (n={})",
            row.backend_id,
            row.mode,
            fmt(row.agreement_da_poe),
            fmt(row.self_consistency_da),
            fmt(row.self_consistency_poe),
            row.n,
        );
    }
    Ok(())
}

fn annotate(record: PathBuf, annotations: PathBuf, store: Option<PathBuf>) -> Result<()> {
    let run_record = RunRecord::load(&record)?;
    let new_annotations: Vec<ErrorAnnotation> = load_annotations(&annotations)?;
    if new_annotations.is_empty() {
        bail!("no annotations found in {}", annotations.display());
    }
    let store = store.unwrap_or_else(|| {
        let mut p = record.as_os_str().to_owned();
        p.push(".annotations.jsonl");
        PathBuf::from(p)
    });
    let summary = annotate_errors(&run_record, &new_annotations, &store)?;
    println!(
        "stored {} annotations ({} effective after latest-wins merge)",
        summary.history_len,
        summary.effective.len()
    );
    println!("category histogram:");
    for category in elimbench::runner::ErrorCategory::ALL {
        let count = summary.histogram.get(&category).copied().unwrap_or(0);
        println!(
            "  {:<22} {:>4}  ({:.2})",
            format!("{category:?}"),
            count,
            summary.fraction(category)
        );
    }
    Ok(())
}
