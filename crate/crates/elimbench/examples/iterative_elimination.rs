//! The iterative protocol on 5-choice questions: eliminate one choice at a
//! time while answering directly at every width, then watch errors
//! propagate in the raw accuracy column.
//!
//! ```bash
//! cargo run -p elimbench --example iterative_elimination
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elimbench::backend::{GenParams, MockAnswer, MockBackend, MockPolicy};
use elimbench::corpus::{load_dataset, DatasetSchema};
use elimbench::iterative::{conditional_accuracies, raw_accuracy, run_iterative};
use elimbench::prompting::{Mode, Strategy, StrategyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample_questions.jsonl");
    let questions = load_dataset(&data, DatasetSchema::Canonical)?;

    // A flawed eliminator: discards the gold 25% of the time at each step,
    // while the direct strategy is right 90% of the time when the gold is
    // still on the board.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut policy = MockPolicy::default();
    for q in &questions {
        for step in 0..4usize {
            let da = if rng.random::<f64>() < 0.9 { MockAnswer::Gold } else { MockAnswer::NotGold };
            policy = policy.script(q.id.clone(), Strategy::DirectAnswer, step, da);
        }
        for step in 0..3usize {
            let poe =
                if rng.random::<f64>() < 0.25 { MockAnswer::Gold } else { MockAnswer::NotGold };
            policy = policy.script(q.id.clone(), Strategy::ProcessOfElimination, step, poe);
        }
    }
    let mock = MockBackend::new("flawed-eliminator", policy, &questions);

    let da_cfg = StrategyConfig::zero_shot(Strategy::DirectAnswer, Mode::Base);
    let poe_cfg = StrategyConfig::zero_shot(Strategy::ProcessOfElimination, Mode::Base);
    let params = GenParams::default();
    let traces: Vec<_> = questions
        .iter()
        .map(|q| run_iterative(q, &poe_cfg, &da_cfg, &mock, &params, 7))
        .collect::<Result<_, _>>()?;

    println!("{} questions, widths 5 down to 2\n", traces.len());
    println!("{:>8} {:>14} {:>13} {:>14}", "choices", "raw accuracy", "DA accuracy", "PoE accuracy");
    for width in (2..=5usize).rev() {
        let raw = raw_accuracy(&traces, width)?;
        let cond = conditional_accuracies(&traces, width)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{width:>8} {raw:>14.3} {:>13} {:>14}",
            fmt(cond.da),
            fmt(cond.poe)
        );
    }
    println!("\nraw accuracy counts questions whose gold was already eliminated as wrong,");
    println!("so it decays with each elimination; the conditional columns restrict to");
    println!("questions whose gold is still among the remaining choices.");

    let one = &traces[0];
    println!("\nexample trace for `{}`:", one.question_id);
    for step in &one.steps {
        println!(
            "  step {}: {} choices shown, eliminated ({}) \"{}\"; gold alive after: {}",
            step.step_index,
            step.remaining_before.len(),
            step.eliminated_label,
            step.remaining_before[(step.eliminated_label as u8 - b'A') as usize].text,
            step.gold_alive_after,
        );
    }
    Ok(())
}
