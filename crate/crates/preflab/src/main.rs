//! Thin command-line front end. All logic lives in the library; this binary
//! parses arguments, wires files to library calls, and maps errors to exit
//! codes (2 = schema/input, 3 = numeric, 4 = i/o).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use preflab::corank::{corank, PassMatrix};
use preflab::datagen;
use preflab::error::{Error, Result};
use preflab::experiment::{
    emit_report, load_config, run_experiment, CorankDocument, DATASET_FILE, PROBE_FILE,
};
use preflab::math::sub_seed;
use preflab::prefmetrics::{
    preference_at_k_mean, preference_rate, read_outcomes_jsonl, Aggregation, RateOutcome,
};
use preflab::probe::{detect_squeeze, trace_confidence, DynamicsTrace};
use preflab::seqmodel::Policy;
use preflab::simplex::verify_counterexample;

#[derive(Parser)]
#[command(
    name = "preflab",
    version,
    about = "Preference-optimization laboratory: train small policies, probe their dynamics, rank solutions, and score preference metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Micro,
    Macro,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and probe set from a config document
    Gen {
        /// Experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a training experiment and write trace.csv, summary.json, and
    /// checkpoints
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (falls back to the config's `outputs`)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate probe confidence for a checkpoint, or check a trace for the
    /// squeezing signature
    Probe {
        /// Policy checkpoint (confidence mode)
        #[arg(long, requires = "probe")]
        checkpoint: Option<PathBuf>,
        /// Probe set JSONL (confidence mode)
        #[arg(long)]
        probe: Option<PathBuf>,
        /// trace.csv to test for squeezing (squeeze mode)
        #[arg(long, conflicts_with = "checkpoint")]
        trace: Option<PathBuf>,
        /// Starting step for the squeeze check (default 0)
        #[arg(long)]
        from: Option<u64>,
        /// Ending step for the squeeze check (default: final row)
        #[arg(long)]
        to: Option<u64>,
        /// Write the JSON result here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize the three-action simplex both ways and verify the
    /// counterexample claims
    VerifyTheorem {
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score solutions and tests from a binary pass matrix
    Corank {
        /// Pass matrix: .csv of 0/1 lines, or JSON {n, m, rows}
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        damping: f64,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preference-aware pass@k and rate metrics over outcome records
    Metrics {
        /// JSON lines, one {n, pass_count, c_p} record per line
        #[arg(long)]
        input: PathBuf,
        /// k values, e.g. --k 1,5
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        k: Vec<u64>,
        #[arg(long, value_enum, default_value_t = AggregationArg::Micro)]
        aggregation: AggregationArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate two or more completed runs into one comparison document
    Report {
        /// Run directories (each holding a summary.json)
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let record = json!({
                "error": match &e {
                    Error::InputDomain(_) => "input_domain",
                    Error::Numeric(_) => "numeric_failure",
                    Error::Schema(_) => "schema_violation",
                    Error::Io { .. } => "io_failure",
                },
                "detail": e.to_string(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::schema(e.to_string()))
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Gen { config, out, seed } => {
            let (mut cfg, _) = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let task = datagen::generate_task(&cfg.task.task_config(), sub_seed(cfg.seed, "task"))?;
            let dataset =
                datagen::gen_dataset(&task, sub_seed(cfg.seed, "dataset"), cfg.task.dataset_size)?;
            let report =
                datagen::build_probe(&task, &dataset, sub_seed(cfg.seed, "probe"), cfg.probe.size)?;
            datagen::write_dataset_jsonl(
                &out.join(DATASET_FILE),
                &dataset,
                sub_seed(cfg.seed, "dataset"),
                task.scenario,
            )?;
            datagen::write_probe_jsonl(
                &out.join(PROBE_FILE),
                &report.probe,
                sub_seed(cfg.seed, "probe"),
                task.scenario,
            )?;
            println!(
                "wrote {} examples and {} probe entries ({} dropped) to {}",
                dataset.len(),
                report.probe.len(),
                report.dropped,
                out.display()
            );
            Ok(0)
        }
        Command::Train { config, out, seed } => {
            let (mut cfg, text) = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out_dir = out
                .or_else(|| cfg.outputs.clone())
                .ok_or_else(|| Error::input("no output directory: pass --out or set `outputs`"))?;
            let summary = run_experiment(&cfg, &text, &out_dir)?;
            println!(
                "{} run complete: {} steps, final loss {:.6}, pass rate {:.3} -> {}",
                summary.method.name(),
                summary.steps_total,
                summary.final_loss,
                summary.eval.pass_rate,
                out_dir.display()
            );
            Ok(0)
        }
        Command::Probe {
            checkpoint,
            probe,
            trace,
            from,
            to,
            out,
        } => match (checkpoint, trace) {
            (Some(ck_path), None) => {
                let probe_path =
                    probe.ok_or_else(|| Error::input("confidence mode needs --probe"))?;
                let policy = Policy::load(&ck_path)?;
                let probe_set = datagen::read_probe_jsonl(&probe_path, policy.vocab())?;
                let sample = trace_confidence(&policy, &probe_set)?;
                let mut roles = serde_json::Map::new();
                for (role, value) in probe_set.roles().iter().zip(&sample.role_means) {
                    roles.insert(role.name().to_string(), json!(value));
                }
                let doc = json!({
                    "step": policy.step(),
                    "roles": roles,
                    "argmax_logprob": sample.argmax_logprob,
                });
                emit(&out, &serde_json::to_string_pretty(&doc).unwrap())?;
                Ok(0)
            }
            (None, Some(trace_path)) => {
                let trace = DynamicsTrace::read_csv(&trace_path)?;
                let from = from.unwrap_or(0);
                let to = match to {
                    Some(t) => t,
                    None => {
                        trace
                            .final_row()
                            .ok_or_else(|| Error::input("trace has no rows"))?
                            .step
                    }
                };
                let report = detect_squeeze(&trace, from, to)?;
                emit(&out, &pretty(&report)?)?;
                Ok(0)
            }
            _ => Err(Error::input(
                "probe needs either --checkpoint with --probe, or --trace",
            )),
        },
        Command::VerifyTheorem {
            beta,
            tolerance,
            out,
        } => {
            let report = verify_counterexample(beta, tolerance)?;
            emit(&out, &pretty(&report)?)?;
            if report.pass {
                Ok(0)
            } else {
                eprintln!("failed clauses: {:?}", report.failed_clauses());
                Ok(1)
            }
        }
        Command::Corank {
            input,
            damping,
            iterations,
            out,
        } => {
            let pm = PassMatrix::from_file(&input)?;
            let state = corank(&pm, damping, iterations)?;
            let doc = CorankDocument::from_state(&state, damping)?;
            emit(&out, &pretty(&doc)?)?;
            Ok(0)
        }
        Command::Metrics {
            input,
            k,
            aggregation,
            out,
        } => {
            let outcomes = read_outcomes_jsonl(&input)?;
            let aggregation = match aggregation {
                AggregationArg::Micro => Aggregation::Micro,
                AggregationArg::Macro => Aggregation::Macro,
            };
            let mut results = Vec::new();
            for &k in &k {
                results.push(json!({
                    "metric": "preference@k",
                    "k": k,
                    "value": preference_at_k_mean(&outcomes, k)?,
                    "aggregation": "mean_over_problems",
                }));
            }
            let rate = preference_rate(&outcomes, aggregation)?;
            let doc = json!({
                "problems": outcomes.len(),
                "results": results,
                "preference_rate": rate.value(),
                "rate_undefined": rate == RateOutcome::Undefined,
                "aggregation": match aggregation {
                    Aggregation::Micro => "micro",
                    Aggregation::Macro => "macro",
                },
            });
            emit(&out, &serde_json::to_string_pretty(&doc).unwrap())?;
            Ok(0)
        }
        Command::Report { runs, out } => {
            let report = emit_report(&runs)?;
            emit(&out, &pretty(&report)?)?;
            Ok(0)
        }
    }
}
