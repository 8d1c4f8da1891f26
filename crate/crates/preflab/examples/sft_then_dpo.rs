//! The two-phase schedule: supervised training followed by pairwise
//! training whose reference is the post-supervised policy.
//!
//! Even after a supervised phase has pushed the preferred response near
//! certainty, the pairwise phase pulls its confidence back down while the
//! greedy output stays strong. On graded tasks the exploration can pay off:
//! the greedy outputs' mean quality often improves on the supervised
//! baseline.
//!
//! Run with: cargo run --example sft_then_dpo

use preflab::datagen::Scenario;
use preflab::experiment::{run_in_memory, ExperimentConfig};
use preflab::probe::{Phase, Role};
use preflab::trainer::Method;

#[allow(clippy::field_reassign_with_default)]
fn config(method: Method, steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 41;
    cfg.task.scenario = Scenario::GradedQuality;
    cfg.task.vocab_size = 12;
    cfg.task.problems = 32;
    cfg.task.dataset_size = 128;
    cfg.task.min_len = 4;
    cfg.task.max_len = 6;
    cfg.model.embed_dim = 8;
    cfg.model.hidden_dim = 24;
    cfg.train.method = method;
    cfg.train.steps = Some(steps);
    cfg.train.probe_every = 100;
    cfg.train.learning_rate = Some(3e-3);
    cfg.probe.size = 32;
    cfg
}

fn main() {
    // 500 steps per phase for the two-phase run; 2000 supervised steps for
    // the baseline it is compared against.
    let sd = run_in_memory(&config(Method::Sd, 500)).expect("two-phase run");
    let sft = run_in_memory(&config(Method::Sft, 2000)).expect("supervised baseline");

    let trace = &sd.result.trace;
    let y_plus = |step: u64| trace.value_at(step, Role::YPlus).unwrap();
    let boundary = trace
        .rows
        .iter()
        .rfind(|r| r.phase == Phase::Sft)
        .unwrap()
        .step;
    let final_step = trace.final_row().unwrap().step;

    println!("phase boundary at step {boundary}; run ends at step {final_step}");
    println!(
        "preferred-response confidence: start {:.3} -> boundary {:.3} -> final {:.3}",
        y_plus(0),
        y_plus(boundary),
        y_plus(final_step)
    );
    println!(
        "the pairwise phase moved it by {:+.3} even though its reference was the post-supervised policy",
        y_plus(final_step) - y_plus(boundary)
    );

    // The reference snapshot is exactly the post-supervised policy.
    let post_sft = &sd.result.phase_checkpoints[0].1;
    let reference = sd.result.reference.as_ref().unwrap();
    assert_eq!(post_sft.params(), reference.as_policy().params());
    println!("reference snapshot matches the post-supervised checkpoint");

    println!();
    println!(
        "mean greedy quality (lower is better): supervised {:.3}, two-phase {:.3}",
        sft.eval.mean_greedy_quality, sd.eval.mean_greedy_quality
    );
    println!(
        "pass rates: supervised {:.3}, two-phase {:.3}",
        sft.eval.pass_rate, sd.eval.pass_rate
    );
}
