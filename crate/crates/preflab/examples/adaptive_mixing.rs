//! The adaptive objective in action.
//!
//! The adaptive loss is a per-example convex combination of the pairwise
//! and likelihood losses, weighted by the geometric-mean token confidence
//! on the preferred response. Early in training the weight is near 1/V and
//! the likelihood term dominates; as the preferred response gains mass the
//! pairwise term takes over and keeps suppressing the dispreferred
//! response without abandoning the preferred one.
//!
//! Run with: cargo run --example adaptive_mixing

use preflab::datagen::{build_probe, gen_dataset, generate_task, Scenario};
use preflab::experiment::{run_in_memory, ExperimentConfig};
use preflab::losses::apo_alpha;
use preflab::probe::Role;
use preflab::trainer::Method;

#[allow(clippy::field_reassign_with_default)]
fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 43;
    cfg.task.scenario = Scenario::GradedQuality;
    cfg.task.vocab_size = 12;
    cfg.task.problems = 32;
    cfg.task.dataset_size = 128;
    cfg.task.min_len = 4;
    cfg.task.max_len = 6;
    cfg.model.embed_dim = 8;
    cfg.model.hidden_dim = 24;
    cfg.train.method = Method::Apo;
    cfg.train.steps = Some(1800);
    cfg.train.probe_every = 300;
    cfg.train.learning_rate = Some(3e-3);
    cfg.probe.size = 32;

    let apo = run_in_memory(&cfg).expect("adaptive run");

    // Recompute the mixing weight on a handful of examples at each phase
    // checkpoint to show where it ended up.
    let task = generate_task(
        &cfg.task.task_config(),
        preflab::math::sub_seed(cfg.seed, "task"),
    )
    .unwrap();
    let dataset = gen_dataset(
        &task,
        preflab::math::sub_seed(cfg.seed, "dataset"),
        cfg.task.dataset_size,
    )
    .unwrap();
    let probe = build_probe(
        &task,
        &dataset,
        preflab::math::sub_seed(cfg.seed, "probe"),
        8,
    )
    .unwrap()
    .probe;

    let mut init = cfg.build_policy().unwrap();
    let trained = &apo.result.policy;
    init.randomize(preflab::math::sub_seed(cfg.seed, "init"), 0.1);
    println!("mixing weight alpha on probe preferred responses:");
    println!("{:>8} {:>12} {:>12}", "prompt", "at init", "after run");
    for idx in 0..probe.len().min(8) {
        let entry = &probe.entries()[idx];
        let y_plus = probe.response(idx, Role::YPlus).unwrap();
        let a0 = apo_alpha(&init, entry.prompt, y_plus).unwrap();
        let a1 = apo_alpha(trained, entry.prompt, y_plus).unwrap();
        println!("{:>8} {:>12.4} {:>12.4}", entry.prompt.0, a0, a1);
    }

    println!();
    println!("confidence trajectory under the adaptive objective:");
    let trace = &apo.result.trace;
    print!("{:>6}", "step");
    for role in &trace.roles {
        print!(" {:>12}", role.name());
    }
    println!();
    for row in &trace.rows {
        print!("{:>6}", row.step);
        for v in &row.role_means {
            print!(" {:>12.3}", v);
        }
        println!();
    }
    println!();
    println!(
        "pass rate {:.3}, mean greedy quality {:.3}",
        apo.eval.pass_rate, apo.eval.mean_greedy_quality
    );
}
