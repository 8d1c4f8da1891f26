//! The preference-aware pass@k estimator family and rate metrics.
//!
//! Run with: cargo run --example preference_metrics

use preflab::prefmetrics::{
    pass_at_k, preference_at_k, preference_at_k_mean, preference_rate, Aggregation, ProblemOutcome,
    RateOutcome,
};

fn main() {
    // A problem with 5 samples: 4 pass the tests, 2 of those also satisfy
    // the preference criterion.
    let outcome = ProblemOutcome::new(5, 4, 2).unwrap();
    println!("one problem, n=5, pass_count=4, c_p=2:");
    for k in 1..=5 {
        println!(
            "  k={k}: preference@k = {:.4}, pass@k = {:.4}",
            preference_at_k(&outcome, k).unwrap(),
            pass_at_k(&outcome, k).unwrap()
        );
    }
    println!("  (preference@k never exceeds pass@k, and both rise with k)");
    println!();

    // When fewer than k samples avoid the preferred set, the metric is
    // exactly one.
    let saturated = ProblemOutcome::new(6, 6, 5).unwrap();
    println!(
        "n=6, c_p=5, k=2 -> {} (only one sample misses, so every pair hits)",
        preference_at_k(&saturated, 2).unwrap()
    );
    println!();

    // Aggregation over a small benchmark.
    let outcomes = vec![
        ProblemOutcome::new(10, 7, 4).unwrap(),
        ProblemOutcome::new(10, 2, 0).unwrap(),
        ProblemOutcome::new(10, 9, 9).unwrap(),
        ProblemOutcome::new(10, 0, 0).unwrap(),
    ];
    for k in [1, 5] {
        println!(
            "mean preference@{k} over {} problems: {:.4}",
            outcomes.len(),
            preference_at_k_mean(&outcomes, k).unwrap()
        );
    }
    match preference_rate(&outcomes, Aggregation::Micro).unwrap() {
        RateOutcome::Defined(v) => println!("micro preference rate (pooled counts): {v:.4}"),
        RateOutcome::Undefined => println!("micro preference rate undefined"),
    }
    match preference_rate(&outcomes, Aggregation::Macro).unwrap() {
        RateOutcome::Defined(v) => println!("macro preference rate (mean of rates): {v:.4}"),
        RateOutcome::Undefined => println!("macro preference rate undefined"),
    }
    println!();

    // No passing solutions anywhere: the rate is undefined, not zero.
    let empty = vec![ProblemOutcome::new(5, 0, 0).unwrap()];
    match preference_rate(&empty, Aggregation::Micro).unwrap() {
        RateOutcome::Defined(v) => println!("unexpected rate {v}"),
        RateOutcome::Undefined => {
            println!("with zero passing solutions the rate reports undefined, distinct from 0")
        }
    }
}
