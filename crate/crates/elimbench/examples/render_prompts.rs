//! Render the four prompt cells (direct answer / elimination, with and
//! without chain-of-thought) for one query question, using the bundled shot
//! fixtures.
//!
//! ```bash
//! cargo run -p elimbench --example render_prompts
//! ```

use elimbench::corpus::{load_shot_fixtures, Question};
use elimbench::prompting::{
    build_prompt, build_shot_examples, Mode, Strategy, StrategyCell, StrategyConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures_path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample_shots.jsonl");
    let fixtures = load_shot_fixtures(&fixtures_path)?;

    let query = Question::new(
        "demo-query",
        "Where is Chicago?",
        vec!["Illinois".into(), "The Moon".into()],
        0,
    )?;

    for cell in StrategyCell::ALL {
        // Reduce every shot to 2 choices with balanced gold positions; the
        // same seed gives identical shot blocks across all four cells.
        let shots = build_shot_examples(&fixtures, cell.strategy, cell.mode, 2, 42)?;
        let cfg = StrategyConfig::new(cell.strategy, cell.mode, shots)?;
        let prompt = build_prompt(&cfg, &query)?;
        println!("================ {cell} ================");
        println!("{prompt}");
        println!("================ end ({} bytes) ================\n", prompt.len());
    }

    // The balance discipline: with ten shots, five golds sit at (A).
    let shots = build_shot_examples(&fixtures, Strategy::DirectAnswer, Mode::Base, 2, 42)?;
    let at_a = shots.iter().filter(|s| s.question.gold_label == 'A').count();
    println!("gold-at-(A) shots: {at_a}/{}", shots.len());
    Ok(())
}
