//! Why driving the pairwise loss to zero does not force the preferred
//! response toward certainty.
//!
//! On three actions with reference (0.3, 0.2, 0.5) and the single pair
//! "action 0 over action 1", likelihood descent lands on the vertex
//! (1, 0, 0). Pairwise descent only needs the dispreferred action's
//! probability to vanish relative to the preferred one: it reaches
//! near-zero loss while the preferred action holds well under full mass,
//! so the likelihood loss at that point stays bounded away from zero.
//!
//! Run with: cargo run --example counterexample_simplex

use preflab::simplex::{
    optimize_simplex, simplex_loss, verify_counterexample, SimplexLoss, CANONICAL_PAIR,
    CANONICAL_REFERENCE,
};

fn main() {
    // A point with pairwise loss ~0 and preferred probability only 0.2
    // exists by construction.
    let witness = [0.2, 1e-12, 0.8 - 1e-12];
    let loss = simplex_loss(
        SimplexLoss::Dpo,
        &CANONICAL_REFERENCE,
        CANONICAL_PAIR,
        &witness,
        1.0,
    );
    println!(
        "witness distribution ({:.1}, ~0, {:.1}): pairwise loss {loss:.2e}, preferred mass only {:.1}",
        witness[0], witness[2], witness[0]
    );
    println!();

    // Watch plain gradient descent approach each optimum.
    let sft = optimize_simplex(
        SimplexLoss::Sft,
        CANONICAL_REFERENCE,
        CANONICAL_PAIR,
        [1.0 / 3.0; 3],
        1.0,
        3000,
        2.0,
    )
    .unwrap();
    println!(
        "likelihood descent from uniform: dist ({:.4}, {:.1e}, {:.1e}), loss {:.2e}",
        sft.distribution[0], sft.distribution[1], sft.distribution[2], sft.loss
    );

    for beta in [0.1, 1.0] {
        let report = verify_counterexample(beta, 1e-3).unwrap();
        println!();
        println!(
            "temperature {beta}: pairwise descent stopped after {} steps at dist ({:.4}, {:.1e}, {:.4})",
            report.dpo.steps_run,
            report.dpo.distribution[0],
            report.dpo.distribution[1],
            report.dpo.distribution[2],
        );
        println!(
            "  optimality ratio {:.2e} (unit-temperature loss {:.2e}), likelihood loss there {:.4}",
            report.dpo_ratio, report.dpo_loss_unit_beta, report.sft_loss_at_dpo_optimum
        );
        for (clause, ok) in &report.clauses {
            println!("  [{}] {clause}", if *ok { "ok" } else { "FAILED" });
        }
        assert!(report.pass);
    }
}
