//! Full pipeline: run all four schedules on one task and tabulate them.
//!
//! Each run writes trace.csv, summary.json, and per-phase checkpoints into
//! its own directory; the comparison report then pools the runs (they must
//! share a task fingerprint) in the fixed order sft, dpo, sd, apo.
//!
//! Run with: cargo run --example method_comparison

use preflab::datagen::Scenario;
use preflab::experiment::{emit_report, run_experiment, ExperimentConfig};
use preflab::trainer::Method;

#[allow(clippy::field_reassign_with_default)]
fn config(method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 42;
    cfg.task.scenario = Scenario::GradedQuality;
    cfg.task.vocab_size = 12;
    cfg.task.problems = 32;
    cfg.task.dataset_size = 128;
    cfg.task.min_len = 4;
    cfg.task.max_len = 6;
    cfg.model.embed_dim = 8;
    cfg.model.hidden_dim = 24;
    cfg.train.method = method;
    cfg.train.probe_every = 100;
    cfg.train.learning_rate = Some(3e-3);
    cfg.train.steps = Some(match method {
        Method::Sft => 2000,
        Method::Dpo => 250,
        Method::Sd => 500,
        Method::Apo => 1800,
    });
    cfg.probe.size = 32;
    cfg
}

fn main() {
    let base = std::env::temp_dir().join("preflab-comparison-demo");
    let _ = std::fs::remove_dir_all(&base);

    let mut dirs = Vec::new();
    for method in [Method::Sft, Method::Dpo, Method::Sd, Method::Apo] {
        let cfg = config(method);
        let dir = base.join(method.name());
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let summary = run_experiment(&cfg, &text, &dir).expect("training run");
        println!(
            "{:>4}: {} steps, final loss {:.4}, checkpoints {:?}",
            method.name(),
            summary.steps_total,
            summary.final_loss,
            summary.checkpoints
        );
        dirs.push(dir);
    }

    let report = emit_report(&dirs).expect("comparison report");
    println!();
    println!("comparison over task {}", report.task_fingerprint);
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>12} {:>12}",
        "method", "pass", "quality", "pref rate", "final y+", "final y-"
    );
    for row in &report.methods {
        println!(
            "{:>6} {:>10.3} {:>10.3} {:>10} {:>12.3} {:>12.3}",
            row.method.name(),
            row.eval.pass_rate,
            row.eval.mean_greedy_quality,
            row.eval
                .preference_rate
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "undef".into()),
            row.final_roles["y_plus"],
            row.final_roles["y_minus"],
        );
    }
    println!();
    println!("run artifacts under {}", base.display());
}
