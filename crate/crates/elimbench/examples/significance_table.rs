//! Difference-in-means significance from accuracy proportions alone:
//! rebuild 0/1 correctness vectors from published-style numbers and run the
//! Welch t-test behind the accuracy tables.
//!
//! ```bash
//! cargo run -p elimbench --example significance_table
//! ```

use elimbench::metrics::{diff_t_test, CorrectnessVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // (label, direct accuracy, elimination accuracy), n = 500 per arm
    let rows = [
        ("strong model, tiny gap", 0.924, 0.912),
        ("weak model, small gap", 0.516, 0.472),
        ("moderate gap", 0.838, 0.820),
        ("large gap", 0.890, 0.778),
        ("extreme gap", 0.930, 0.846),
    ];

    println!("{:<24} {:>6} {:>6} {:>7} {:>8} {:>8}", "case", "DA", "PoE", "diff", "t", "p-val");
    for (label, da, poe) in rows {
        let a = CorrectnessVector::from_counts((da * 500.0_f64).round() as usize, 500);
        let b = CorrectnessVector::from_counts((poe * 500.0_f64).round() as usize, 500);
        let r = diff_t_test(&a, &b)?;
        println!(
            "{label:<24} {:>6.3} {:>6.3} {:>7.3} {:>8.3} {:>8.3}",
            r.acc_a, r.acc_b, r.diff, r.t_stat, r.p_value
        );
    }

    println!("\nsignificance needs a surprisingly large gap at n = 500:");
    for gap in [1usize, 2, 3, 4, 6, 8] {
        let a = CorrectnessVector::from_counts(450 + gap * 5, 500);
        let b = CorrectnessVector::from_counts(450 - gap * 5, 500);
        let r = diff_t_test(&a, &b)?;
        println!("  diff {:.3} -> p = {:.4}", r.diff, r.p_value);
    }
    Ok(())
}
