//! The squeezing effect, side by side.
//!
//! Trains one policy with the supervised objective and another with the
//! pairwise objective on the same verifiable-correctness task, probing
//! confidence every 50 updates. Supervised training pulls the preferred
//! response up while everything else drains away. Pairwise training drives
//! the confidence of every tracked response down — including the preferred
//! one — while the model's own greedy output becomes more confident: the
//! probability mass is squeezed onto the argmax.
//!
//! Run with: cargo run --example squeezing_dynamics

use preflab::datagen::Scenario;
use preflab::experiment::{run_in_memory, ExperimentConfig};
use preflab::probe::detect_squeeze;
use preflab::trainer::Method;

#[allow(clippy::field_reassign_with_default)]
fn config(method: Method, steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 42;
    cfg.task.scenario = Scenario::VerifiableOptimum;
    cfg.task.vocab_size = 12;
    cfg.task.problems = 32;
    cfg.task.dataset_size = 128;
    cfg.task.min_len = 4;
    cfg.task.max_len = 6;
    cfg.model.embed_dim = 8;
    cfg.model.hidden_dim = 24;
    cfg.train.method = method;
    cfg.train.steps = Some(steps);
    cfg.train.probe_every = 50;
    cfg.train.learning_rate = Some(3e-3);
    cfg.train.batch_size = 8;
    cfg.probe.size = 32;
    cfg
}

fn print_trace(label: &str, run: &preflab::experiment::CompletedRun) {
    println!("--- {label} ---");
    print!("{:>6} {:>9}", "step", "loss");
    for role in &run.result.trace.roles {
        print!(" {:>12}", role.name());
    }
    println!(" {:>12}", "greedy");
    for row in &run.result.trace.rows {
        print!("{:>6} {:>9.4}", row.step, row.loss);
        for v in &row.role_means {
            print!(" {:>12.3}", v);
        }
        println!(" {:>12.3}", row.argmax_logprob);
    }
}

fn main() {
    let sft = run_in_memory(&config(Method::Sft, 400)).expect("supervised run");
    let dpo = run_in_memory(&config(Method::Dpo, 400)).expect("pairwise run");

    print_trace("supervised (sft)", &sft);
    println!();
    print_trace("pairwise (dpo)", &dpo);
    println!();

    for (label, run) in [("sft", &sft), ("dpo", &dpo)] {
        let last = run.result.trace.final_row().unwrap().step;
        let report = detect_squeeze(&run.result.trace, 0, last).unwrap();
        println!(
            "{label}: squeezed = {} (greedy confidence moved {:+.3})",
            report.squeezed, report.argmax_delta
        );
        for delta in &report.role_deltas {
            println!("    {:>12} moved {:+.3}", delta.role.name(), delta.delta);
        }
    }
    println!();
    println!(
        "greedy pass rate after training: sft {:.3}, dpo {:.3}",
        sft.eval.pass_rate, dpo.eval.pass_rate
    );
}
