//! Report assembly: accuracy/diff/significance tables, agreement and
//! self-consistency tables, iterative-width tables, and parse-failure
//! diagnostics. The CSV and markdown forms render from the same formatted
//! strings, so the numbers cannot drift between them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Question;
use crate::iterative::{conditional_accuracies, raw_accuracy};
use crate::metrics::{
    agreement_2choice, diff_t_test, question_index, self_consistency, Agreement,
    CorrectnessVector, QuestionIndex,
};
use crate::parsing::{ParseStatus, Prediction};
use crate::prompting::{Mode, Strategy, StrategyCell};
use crate::runner::record::RunRecord;
use crate::runner::RunnerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub backend_id: String,
    pub mode: Mode,
    pub n: usize,
    pub da_acc: f64,
    pub poe_acc: f64,
    pub diff: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub backend_id: String,
    pub mode: Mode,
    pub n: usize,
    /// Direct pick vs. eliminated choice on 2-choice questions (first runs).
    pub agreement_da_poe: Option<f64>,
    pub self_consistency_da: Option<f64>,
    pub self_consistency_poe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeRow {
    pub backend_id: String,
    pub mode: Mode,
    pub width: usize,
    pub n: usize,
    pub raw_accuracy: f64,
    pub da_accuracy: Option<f64>,
    pub poe_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseFailureRow {
    pub backend_id: String,
    pub cell: String,
    pub n: usize,
    pub failure_rate: f64,
}

/// All tables for a set of runs over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub dataset_name: String,
    pub accuracy: Vec<AccuracyRow>,
    pub consistency: Vec<ConsistencyRow>,
    pub iterative: Vec<IterativeRow>,
    pub parse_failures: Vec<ParseFailureRow>,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt3).unwrap_or_else(|| "-".to_string())
}

fn preds_of(
    record: &RunRecord,
    strategy: Strategy,
    mode: Mode,
    repeat: usize,
) -> Vec<Prediction> {
    record
        .cell_predictions(strategy, mode, repeat)
        .into_iter()
        .cloned()
        .collect()
}

/// Builds the report tables from raw transcripts; every number is a direct
/// metrics-module computation, with no report-side arithmetic.
pub fn emit_report(records: &[RunRecord], questions: &[Question]) -> Result<ReportDoc, RunnerError> {
    if records.is_empty() {
        return Err(RunnerError::NoRecords);
    }
    let dataset_name = records[0].dataset_name.clone();
    for r in records {
        if r.dataset_name != dataset_name {
            return Err(RunnerError::MixedDatasets(
                dataset_name,
                r.dataset_name.clone(),
            ));
        }
    }
    let index = question_index(questions);
    for r in records {
        for t in &r.transcripts {
            if !index.contains_key(&t.question_id) {
                return Err(RunnerError::UnknownQuestion(t.question_id.clone()));
            }
        }
    }

    // Pool per-cell predictions across records, keyed by backend.
    let mut pooled: BTreeMap<(String, Mode, Strategy, usize), Vec<Prediction>> = BTreeMap::new();
    for record in records {
        for mode in [Mode::Base, Mode::Cot] {
            for strategy in [Strategy::DirectAnswer, Strategy::ProcessOfElimination] {
                let max_repeat = record.max_repeat(strategy, mode);
                for repeat in 0..=max_repeat.unwrap_or(0) {
                    let preds = preds_of(record, strategy, mode, repeat);
                    if !preds.is_empty() {
                        pooled
                            .entry((record.backend_id.clone(), mode, strategy, repeat))
                            .or_default()
                            .extend(preds);
                    }
                }
            }
        }
    }

    let mut accuracy = Vec::new();
    let mut consistency = Vec::new();
    let backends: Vec<String> = {
        let mut ids: Vec<String> = pooled.keys().map(|k| k.0.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    };
    for backend_id in &backends {
        for mode in [Mode::Base, Mode::Cot] {
            let get = |strategy: Strategy, repeat: usize| {
                pooled.get(&(backend_id.clone(), mode, strategy, repeat))
            };
            let (Some(da0), Some(poe0)) = (
                get(Strategy::DirectAnswer, 0),
                get(Strategy::ProcessOfElimination, 0),
            ) else {
                continue;
            };
            let da_vec = CorrectnessVector::from_predictions(da0, &index)?;
            let poe_vec = CorrectnessVector::from_predictions(poe0, &index)?;
            let report = diff_t_test(&da_vec, &poe_vec)?;
            accuracy.push(AccuracyRow {
                backend_id: backend_id.clone(),
                mode,
                n: report.n_a,
                da_acc: report.acc_a,
                poe_acc: report.acc_b,
                diff: report.diff,
                t_stat: report.t_stat,
                p_value: report.p_value,
            });

            let agreement = agreement_rate(da0, poe0, &index)?;
            let self_da = match get(Strategy::DirectAnswer, 1) {
                Some(da1) => Some(self_consistency(da0, da1)?),
                None => None,
            };
            let self_poe = match get(Strategy::ProcessOfElimination, 1) {
                Some(poe1) => Some(self_consistency(poe0, poe1)?),
                None => None,
            };
            consistency.push(ConsistencyRow {
                backend_id: backend_id.clone(),
                mode,
                n: da0.len(),
                agreement_da_poe: agreement,
                self_consistency_da: self_da,
                self_consistency_poe: self_poe,
            });
        }
    }

    let mut iterative = Vec::new();
    for record in records {
        for mode in [Mode::Base, Mode::Cot] {
            let traces: Vec<_> = record
                .traces
                .iter()
                .filter(|t| t.mode == mode)
                .cloned()
                .collect();
            if traces.is_empty() {
                continue;
            }
            let max_width = traces
                .iter()
                .map(|t| t.da_at_width.keys().max().copied().unwrap_or(2))
                .max()
                .unwrap_or(2);
            for width in (2..=max_width).rev() {
                if !traces.iter().all(|t| t.da_at_width.contains_key(&width)) {
                    continue;
                }
                let raw = raw_accuracy(&traces, width)?;
                let cond = conditional_accuracies(&traces, width)?;
                iterative.push(IterativeRow {
                    backend_id: record.backend_id.clone(),
                    mode,
                    width,
                    n: traces.len(),
                    raw_accuracy: raw,
                    da_accuracy: cond.da,
                    poe_accuracy: cond.poe,
                });
            }
        }
    }

    let mut parse_failures = Vec::new();
    for record in records {
        for &cell in &StrategyCell::ALL {
            let matching: Vec<_> = record
                .transcripts
                .iter()
                .filter(|t| t.strategy == cell.strategy && t.mode == cell.mode)
                .collect();
            if matching.is_empty() {
                continue;
            }
            let failures = matching
                .iter()
                .filter(|t| t.prediction.parse_status != ParseStatus::Ok)
                .count();
            parse_failures.push(ParseFailureRow {
                backend_id: record.backend_id.clone(),
                cell: cell.to_string(),
                n: matching.len(),
                failure_rate: failures as f64 / matching.len() as f64,
            });
        }
    }

    Ok(ReportDoc {
        dataset_name,
        accuracy,
        consistency,
        iterative,
        parse_failures,
    })
}

/// Mean 2-choice agreement over aligned first-run pairs; `None` when the
/// questions are not 2-choice (agreement is undefined there).
fn agreement_rate(
    da: &[Prediction],
    poe: &[Prediction],
    index: &QuestionIndex,
) -> Result<Option<f64>, RunnerError> {
    if da.iter().any(|p| {
        index
            .get(&p.question_id)
            .map(|q| q.choice_count() != 2)
            .unwrap_or(true)
    }) {
        return Ok(None);
    }
    let by_id: BTreeMap<&str, &Prediction> =
        poe.iter().map(|p| (p.question_id.as_str(), p)).collect();
    let mut agree = 0usize;
    let mut total = 0usize;
    for d in da {
        let q = index
            .get(&d.question_id)
            .ok_or_else(|| RunnerError::UnknownQuestion(d.question_id.clone()))?;
        let p = by_id
            .get(d.question_id.as_str())
            .ok_or_else(|| RunnerError::UnknownQuestion(d.question_id.clone()))?;
        if agreement_2choice(d, p, q)? == Agreement::Agree {
            agree += 1;
        }
        total += 1;
    }
    Ok(Some(agree as f64 / total as f64))
}

fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!(
        "|{}\n",
        header.iter().map(|_| " --- |").collect::<String>()
    ));
    for row in rows {
        out.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    out
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("csv header");
    for row in rows {
        writer.write_record(row).expect("csv row");
    }
    String::from_utf8(writer.into_inner().expect("csv flush")).expect("csv utf8")
}

impl ReportDoc {
    fn accuracy_cells(&self) -> Vec<Vec<String>> {
        self.accuracy
            .iter()
            .map(|r| {
                vec![
                    r.backend_id.clone(),
                    r.mode.to_string(),
                    r.n.to_string(),
                    fmt3(r.da_acc),
                    fmt3(r.poe_acc),
                    fmt3(r.diff),
                    fmt3(r.t_stat),
                    fmt3(r.p_value),
                ]
            })
            .collect()
    }

    fn consistency_cells(&self) -> Vec<Vec<String>> {
        self.consistency
            .iter()
            .map(|r| {
                vec![
                    r.backend_id.clone(),
                    r.mode.to_string(),
                    r.n.to_string(),
                    fmt_opt(r.agreement_da_poe),
                    fmt_opt(r.self_consistency_da),
                    fmt_opt(r.self_consistency_poe),
                ]
            })
            .collect()
    }

    fn iterative_cells(&self) -> Vec<Vec<String>> {
        self.iterative
            .iter()
            .map(|r| {
                vec![
                    r.backend_id.clone(),
                    r.mode.to_string(),
                    r.width.to_string(),
                    r.n.to_string(),
                    fmt3(r.raw_accuracy),
                    fmt_opt(r.da_accuracy),
                    fmt_opt(r.poe_accuracy),
                ]
            })
            .collect()
    }

    fn parse_failure_cells(&self) -> Vec<Vec<String>> {
        self.parse_failures
            .iter()
            .map(|r| {
                vec![
                    r.backend_id.clone(),
                    r.cell.clone(),
                    r.n.to_string(),
                    fmt3(r.failure_rate),
                ]
            })
            .collect()
    }

    const ACCURACY_HEADER: [&'static str; 8] =
        ["Model", "Mode", "N", "DA", "PoE", "Diff", "t", "p-val"];
    const CONSISTENCY_HEADER: [&'static str; 6] =
        ["Model", "Mode", "N", "DA vs PoE", "DA Self", "PoE Self"];
    const ITERATIVE_HEADER: [&'static str; 7] = [
        "Model",
        "Mode",
        "Choices",
        "N",
        "Raw Accuracy",
        "DA Accuracy",
        "PoE Accuracy",
    ];
    const PARSE_HEADER: [&'static str; 4] = ["Model", "Cell", "N", "Parse Failure Rate"];

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# Report: {}\n", self.dataset_name);
        if !self.accuracy.is_empty() {
            out.push_str("\n## Accuracy\n\n");
            out.push_str(&markdown_table(&Self::ACCURACY_HEADER, &self.accuracy_cells()));
        }
        if !self.consistency.is_empty() {
            out.push_str("\n## Consistency\n\n");
            out.push_str(&markdown_table(
                &Self::CONSISTENCY_HEADER,
                &self.consistency_cells(),
            ));
        }
        if !self.iterative.is_empty() {
            out.push_str("\n## Iterative elimination\n\n");
            out.push_str(&markdown_table(&Self::ITERATIVE_HEADER, &self.iterative_cells()));
        }
        if !self.parse_failures.is_empty() {
            out.push_str("\n## Parse failures\n\n");
            out.push_str(&markdown_table(&Self::PARSE_HEADER, &self.parse_failure_cells()));
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        csv_table(&Self::ACCURACY_HEADER, &self.accuracy_cells())
    }

    pub fn consistency_csv(&self) -> String {
        csv_table(&Self::CONSISTENCY_HEADER, &self.consistency_cells())
    }

    pub fn iterative_csv(&self) -> String {
        csv_table(&Self::ITERATIVE_HEADER, &self.iterative_cells())
    }

    pub fn parse_failures_csv(&self) -> String {
        csv_table(&Self::PARSE_HEADER, &self.parse_failure_cells())
    }

    /// Writes `report.md` plus one CSV per non-empty table.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, RunnerError> {
        std::fs::create_dir_all(dir).map_err(|source| RunnerError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut written = Vec::new();
        let mut write = |name: &str, content: String| -> Result<(), RunnerError> {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|source| RunnerError::Io {
                path: path.display().to_string(),
                source,
            })?;
            written.push(path);
            Ok(())
        };
        write("report.md", self.to_markdown())?;
        if !self.accuracy.is_empty() {
            write("accuracy.csv", self.accuracy_csv())?;
        }
        if !self.consistency.is_empty() {
            write("consistency.csv", self.consistency_csv())?;
        }
        if !self.iterative.is_empty() {
            write("iterative.csv", self.iterative_csv())?;
        }
        if !self.parse_failures.is_empty() {
            write("parse_failures.csv", self.parse_failures_csv())?;
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Question;
    use crate::parsing::Prediction;
    use crate::runner::record::Transcript;

    fn question(i: usize, gold: usize) -> Question {
        Question::new(
            format!("q{i}"),
            format!("Pooled report item {i}: which side?"),
            vec!["left".into(), "right".into()],
            gold,
        )
        .unwrap()
    }

    fn single_cell_record(
        strategy: Strategy,
        questions: &[Question],
        chosen: impl Fn(&Question) -> char,
    ) -> RunRecord {
        let transcripts = questions
            .iter()
            .map(|q| {
                let label = chosen(q);
                Transcript {
                    question_id: q.id.clone(),
                    strategy,
                    mode: Mode::Base,
                    repeat: 0,
                    width: None,
                    prompt_hash: String::new(),
                    raw_completion: format!("({label})"),
                    prediction: Prediction {
                        question_id: q.id.clone(),
                        strategy,
                        mode: Mode::Base,
                        chosen_label: Some(label),
                        rationale: None,
                        parse_status: ParseStatus::Ok,
                        raw_text: format!("({label})"),
                    },
                }
            })
            .collect();
        RunRecord {
            config_hash: "h".into(),
            dataset_name: "pool".into(),
            backend_id: "mock:pool".into(),
            started_unix: 0,
            finished_unix: 0,
            complete: true,
            incomplete_reason: None,
            parse_failure_rate: 0.0,
            lint_warnings: vec![],
            eval_questions: questions.to_vec(),
            transcripts,
            traces: vec![],
        }
    }

    #[test]
    fn one_da_record_plus_one_poe_record_pool_into_one_row() {
        let questions: Vec<Question> = (0..10).map(|i| question(i, i % 2)).collect();
        let other = |q: &Question| if q.gold_label == 'A' { 'B' } else { 'A' };
        let da_record =
            single_cell_record(Strategy::DirectAnswer, &questions, |q| q.gold_label);
        let poe_record =
            single_cell_record(Strategy::ProcessOfElimination, &questions, other);
        let doc = emit_report(&[da_record, poe_record], &questions).unwrap();
        assert_eq!(doc.accuracy.len(), 1, "the two single-cell records merge into one row");
        let row = &doc.accuracy[0];
        assert_eq!(row.da_acc, 1.0);
        assert_eq!(row.poe_acc, 1.0);
        assert_eq!(row.n, 10);
        assert_eq!(doc.consistency[0].agreement_da_poe, Some(1.0));
        assert_eq!(doc.consistency[0].self_consistency_da, None, "single runs have no self column");
    }

    #[test]
    fn unknown_question_id_is_rejected() {
        let questions: Vec<Question> = (0..2).map(|i| question(i, 0)).collect();
        let record = single_cell_record(Strategy::DirectAnswer, &questions, |q| q.gold_label);
        let err = emit_report(std::slice::from_ref(&record), &[question(7, 0)]);
        assert!(matches!(err, Err(RunnerError::UnknownQuestion(_))));
    }

    #[test]
    fn empty_record_list_is_an_error() {
        assert!(matches!(emit_report(&[], &[]), Err(RunnerError::NoRecords)));
    }

    #[test]
    fn mixed_datasets_rejected() {
        let mk = |name: &str| RunRecord {
            config_hash: "h".into(),
            dataset_name: name.into(),
            backend_id: "b".into(),
            started_unix: 0,
            finished_unix: 0,
            complete: true,
            incomplete_reason: None,
            parse_failure_rate: 0.0,
            lint_warnings: vec![],
            eval_questions: vec![],
            transcripts: vec![],
            traces: vec![],
        };
        let err = emit_report(&[mk("a"), mk("b")], &[]);
        assert!(matches!(err, Err(RunnerError::MixedDatasets(_, _))));
    }

    #[test]
    fn csv_and_markdown_carry_identical_numbers() {
        let doc = ReportDoc {
            dataset_name: "demo".into(),
            accuracy: vec![AccuracyRow {
                backend_id: "mock:x".into(),
                mode: Mode::Base,
                n: 500,
                da_acc: 0.9,
                poe_acc: 0.7,
                diff: 0.2,
                t_stat: 8.1568,
                p_value: 1.2e-15,
            }],
            consistency: vec![],
            iterative: vec![],
            parse_failures: vec![],
        };
        let md = doc.to_markdown();
        let csv = doc.accuracy_csv();
        for cell in ["0.900", "0.700", "0.200", "8.157", "0.000"] {
            assert!(md.contains(cell), "markdown missing {cell}: {md}");
            assert!(csv.contains(cell), "csv missing {cell}: {csv}");
        }
    }
}
