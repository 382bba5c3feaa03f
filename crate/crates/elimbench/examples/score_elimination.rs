//! Score-based elimination: discard labels whose probability is strictly
//! below the mean, and see why this baseline is uninformative on 2-choice
//! questions (it can never disagree with the argmax).
//!
//! ```bash
//! cargo run -p elimbench --example score_elimination
//! ```

use std::collections::BTreeMap;

use elimbench::backend::{choice_distribution, GenParams, MockBackend, MockPolicy};
use elimbench::corpus::Question;
use elimbench::prompting::{build_prompt, Mode, Strategy, StrategyConfig};
use elimbench::score_poe::{argmax_select, below_average_eliminate, LabelDistribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("below-average elimination on assorted distributions:\n");
    let cases: Vec<BTreeMap<char, f64>> = vec![
        BTreeMap::from([('A', 0.7), ('B', 0.3)]),
        BTreeMap::from([('A', 0.5), ('B', 0.5)]),
        BTreeMap::from([('A', 0.4), ('B', 0.35), ('C', 0.25)]),
        BTreeMap::from([('A', 0.05), ('B', 0.9), ('C', 0.03), ('D', 0.02)]),
    ];
    for probs in cases {
        let d = LabelDistribution::new(probs.clone())?;
        let keep = argmax_select(&d)?;
        let eliminated = below_average_eliminate(&d)?;
        println!("  {probs:?}\n    argmax: {keep}   eliminated: {eliminated:?}\n");
    }

    // Wire the rule to a backend's label distribution. The mock exposes raw
    // token weights, with some mass on an unrelated token that gets
    // renormalized away.
    let q = Question::new(
        "score-demo",
        "Which option carries the highest probability?",
        vec!["the first".into(), "the second".into()],
        0,
    )?;
    let mut mock = MockBackend::new("score-demo", MockPolicy::oracle(), std::slice::from_ref(&q));
    mock.set_label_weights("score-demo", BTreeMap::from([('A', 0.63), ('B', 0.27), ('x', 0.10)]));

    let prompt = build_prompt(
        &StrategyConfig::zero_shot(Strategy::DirectAnswer, Mode::Base),
        &q,
    )?;
    let probs = choice_distribution(&mock, &prompt, &['A', 'B'], &GenParams::default())?;
    println!("backend label distribution (renormalized over A, B): {probs:?}");
    let d = LabelDistribution::new(probs)?;
    println!(
        "argmax selects ({}) and the score rule eliminates {:?}; always complementary with two choices,",
        argmax_select(&d)?,
        below_average_eliminate(&d)?
    );
    println!("so score-based elimination cannot reveal 2-choice inconsistency the way generative elimination can.");
    Ok(())
}
