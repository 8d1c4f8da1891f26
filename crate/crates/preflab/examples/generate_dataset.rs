//! Build a synthetic preference task, draw a dataset, and attach probe
//! variants.
//!
//! The graded-quality scenario pairs a deliberately mid-quality preferred
//! response with strictly worse correct responses, so a better response
//! always exists outside every pair. The probe set adds single-token
//! "similar" variants plus a strictly better and a strictly worse correct
//! response per entry.
//!
//! Run with: cargo run --example generate_dataset

use preflab::datagen::{
    build_probe, gen_dataset, generate_task, write_dataset_jsonl, write_probe_jsonl, Scenario,
    TaskConfig,
};
use preflab::probe::Role;

fn main() {
    let cfg = TaskConfig {
        scenario: Scenario::GradedQuality,
        vocab_size: 12,
        end_token: 0,
        problems: 10,
        responses_per_problem: 6,
        min_len: 4,
        max_len: 6,
    };
    let task = generate_task(&cfg, 7).expect("task generation");
    let dataset = gen_dataset(&task, 8, 40).expect("dataset generation");
    println!(
        "task: {} problems, {} distinct pairs available, drew {} examples",
        task.problems.len(),
        task.available_pairs(),
        dataset.len()
    );

    let ex = &dataset[0];
    let p = ex.prompt.0 as usize;
    println!();
    println!("first example (prompt {}):", ex.prompt.0);
    println!(
        "  preferred    {:?}  quality {:.3}",
        ex.preferred.tokens(),
        task.quality(&ex.preferred)
    );
    println!(
        "  dispreferred {:?}  quality {:.3}",
        ex.dispreferred.tokens(),
        task.quality(&ex.dispreferred)
    );
    println!(
        "  best correct quality for this problem: {:.3} (strictly better than the pair)",
        task.best_quality(p)
    );

    let report = build_probe(&task, &dataset, 9, 10).expect("probe construction");
    println!();
    println!(
        "probe: {} entries ({} dropped), roles {:?}",
        report.probe.len(),
        report.dropped,
        report
            .probe
            .roles()
            .iter()
            .map(|r| r.name())
            .collect::<Vec<_>>()
    );
    let idx = 0;
    let y_plus = report.probe.response(idx, Role::YPlus).unwrap();
    let sim = report.probe.response(idx, Role::YPlusSim).unwrap();
    let h = report.probe.response(idx, Role::YPlusH).unwrap();
    let l = report.probe.response(idx, Role::YPlusL).unwrap();
    println!("entry 0:");
    println!(
        "  y_plus     {:?}  quality {:.3}",
        y_plus.tokens(),
        task.quality(y_plus)
    );
    println!("  y_plus_sim {:?}  (one token substituted)", sim.tokens());
    println!(
        "  y_plus_h   {:?}  quality {:.3}",
        h.tokens(),
        task.quality(h)
    );
    println!(
        "  y_plus_l   {:?}  quality {:.3}",
        l.tokens(),
        task.quality(l)
    );

    let dir = std::env::temp_dir().join("preflab-datagen-demo");
    std::fs::create_dir_all(&dir).unwrap();
    write_dataset_jsonl(&dir.join("dataset.jsonl"), &dataset, 8, task.scenario).unwrap();
    write_probe_jsonl(&dir.join("probe.jsonl"), &report.probe, 9, task.scenario).unwrap();
    println!();
    println!(
        "wrote dataset.jsonl and probe.jsonl under {}",
        dir.display()
    );
}
