//! Experiment configuration, run orchestration, and on-disk artifacts.
//!
//! A run is described by one JSON document with `task`, `model`, `train`,
//! `probe`, and `outputs` sections. Every field has a default and unknown
//! keys are rejected before any work happens. A completed run directory
//! holds `trace.csv` (the dynamics time series), `summary.json` (config echo
//! plus final metrics), and one checkpoint per phase boundary. All
//! randomness fans out from the single run seed through labeled sub-seeds,
//! so the dataset, the initialization, and the batch order can each be
//! reproduced in isolation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corank::{select_extremes, ScoreState};
use crate::datagen::{self, Scenario, SyntheticTask, TaskConfig};
use crate::error::{Error, Result};
use crate::losses::AlphaMode;
use crate::math::sub_seed;
use crate::prefmetrics::{preference_rate, Aggregation, ProblemOutcome, RateOutcome};
use crate::probe::Phase;
use crate::seqmodel::{Policy, PolicyArch, Vocabulary};
use crate::trainer::{train, AdamParams, Method, OptimizerKind, TrainConfig, TrainResult};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOCK_FILE: &str = "run.lock";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const PROBE_FILE: &str = "probe.jsonl";

/// Default probe-set size when the dataset permits.
pub const DEFAULT_PROBE_SIZE: usize = 500;

/// Task shape. `dataset_size` must not exceed the scenario's distinct-pair
/// supply: 16 corruptions per problem in the verifiable scenario, and the
/// per-problem count of strictly worse correct responses (responses_per_problem
/// minus 2) in the graded one — generation fails loudly otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub scenario: Scenario,
    pub vocab_size: u32,
    pub end_token: u32,
    pub problems: usize,
    pub responses_per_problem: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dataset_size: usize,
    /// Also write dataset.jsonl and probe.jsonl into the run directory.
    pub emit_dataset: bool,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            scenario: Scenario::VerifiableOptimum,
            vocab_size: 16,
            end_token: 0,
            problems: 200,
            responses_per_problem: 6,
            min_len: 4,
            max_len: 8,
            dataset_size: 2500,
            emit_dataset: false,
        }
    }
}

impl TaskSection {
    pub fn task_config(&self) -> TaskConfig {
        TaskConfig {
            scenario: self.scenario,
            vocab_size: self.vocab_size,
            end_token: self.end_token,
            problems: self.problems,
            responses_per_problem: self.responses_per_problem,
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: PolicyArch,
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: PolicyArch::Feedforward,
            context_window: 2,
            embed_dim: 8,
            hidden_dim: 32,
            init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub method: Method,
    /// Optimizer updates (per phase for the two-phase schedule). When
    /// absent, five epochs over the dataset.
    pub steps: Option<usize>,
    pub batch_size: usize,
    /// When absent: 1e-2 for tabular policies, 1e-3 for feedforward.
    pub learning_rate: Option<f64>,
    pub beta: f64,
    pub probe_every: usize,
    pub optimizer: OptimizerKind,
    pub adam_b1: f64,
    pub adam_b2: f64,
    pub adam_eps: f64,
    pub alpha_mode: AlphaMode,
    pub grad_clip: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            method: Method::Sft,
            steps: None,
            batch_size: 8,
            learning_rate: None,
            beta: 0.1,
            probe_every: 100,
            optimizer: OptimizerKind::Adam,
            adam_b1: 0.9,
            adam_b2: 0.999,
            adam_eps: 1e-8,
            alpha_mode: AlphaMode::StopGradient,
            grad_clip: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub size: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            size: DEFAULT_PROBE_SIZE,
        }
    }
}

/// The full experiment document.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub task: TaskSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub probe: ProbeSection,
    /// Output directory; may be overridden on the command line.
    pub outputs: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Effective per-phase step budget: five epochs unless pinned.
    pub fn resolved_steps(&self) -> usize {
        self.train.steps.unwrap_or_else(|| {
            let per_epoch = self.task.dataset_size.div_ceil(self.train.batch_size);
            (5 * per_epoch).max(1)
        })
    }

    /// Effective learning rate: by model kind unless pinned.
    pub fn resolved_learning_rate(&self) -> f64 {
        self.train.learning_rate.unwrap_or(match self.model.kind {
            PolicyArch::Tabular => 1e-2,
            PolicyArch::Feedforward => 1e-3,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.train.method,
            steps: self.resolved_steps(),
            batch_size: self.train.batch_size,
            learning_rate: self.resolved_learning_rate(),
            beta: self.train.beta,
            probe_every: self.train.probe_every.min(self.resolved_steps()),
            seed: sub_seed(self.seed, "shuffle"),
            optimizer: self.train.optimizer,
            adam: AdamParams {
                b1: self.train.adam_b1,
                b2: self.train.adam_b2,
                eps: self.train.adam_eps,
            },
            alpha_mode: self.train.alpha_mode,
            grad_clip: self.train.grad_clip,
        }
    }

    /// Identifies the task + dataset a run was trained on; runs are
    /// comparable only when their fingerprints agree.
    pub fn task_fingerprint(&self) -> String {
        format!(
            "{}-v{}-e{}-p{}-r{}-l{}:{}-n{}-s{}",
            self.task.scenario.name(),
            self.task.vocab_size,
            self.task.end_token,
            self.task.problems,
            self.task.responses_per_problem,
            self.task.min_len,
            self.task.max_len,
            self.task.dataset_size,
            self.seed,
        )
    }

    pub fn build_policy(&self) -> Result<Policy> {
        if !self.model.init_scale.is_finite() || self.model.init_scale < 0.0 {
            return Err(Error::input("init_scale must be a finite nonnegative number"));
        }
        let vocab = Vocabulary::new(self.task.vocab_size, self.task.end_token)?;
        let prompts = self.task.problems as u32;
        let mut policy = match self.model.kind {
            PolicyArch::Tabular => Policy::tabular(vocab, prompts, self.model.context_window)?,
            PolicyArch::Feedforward => Policy::feedforward(
                vocab,
                prompts,
                self.model.context_window,
                self.model.embed_dim,
                self.model.hidden_dim,
            )?,
        };
        policy.randomize(sub_seed(self.seed, "init"), self.model.init_scale);
        Ok(policy)
    }
}

/// Strict parse: unknown keys anywhere are schema violations.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::schema(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_config(&text)?;
    Ok((cfg, text))
}

/// Exclusive ownership of a run directory for the duration of a run.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(RunLock { path }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Final greedy-decode quality of a policy on its task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub problems: usize,
    /// Fraction of problems whose greedy output is a correct response.
    pub pass_rate: f64,
    /// Mean token-cost of the greedy outputs (lower is better).
    pub mean_greedy_quality: f64,
    /// Among passing greedy outputs, the fraction strictly better than the
    /// problem's designated preferred response. Absent when nothing passes.
    pub preference_rate: Option<f64>,
}

pub fn evaluate_policy(task: &SyntheticTask, policy: &Policy) -> Result<EvalMetrics> {
    let max_len = task
        .problems
        .iter()
        .flat_map(|p| p.correct.iter())
        .map(|s| s.len())
        .max()
        .unwrap_or(8)
        + 2;
    let mut outcomes = Vec::with_capacity(task.problems.len());
    let mut quality_total = 0.0;
    for (i, problem) in task.problems.iter().enumerate() {
        let greedy = policy.greedy_decode(problem.prompt, max_len)?;
        let pass = task.is_correct(i, &greedy);
        let better = pass && task.quality(&greedy) < task.quality(task.preferred(i));
        quality_total += task.quality(&greedy);
        outcomes.push(ProblemOutcome::new(1, pass as u64, better as u64)?);
    }
    let passes: u64 = outcomes.iter().map(|o| o.pass_count).sum();
    let rate = match preference_rate(&outcomes, Aggregation::Micro)? {
        RateOutcome::Defined(v) => Some(v),
        RateOutcome::Undefined => None,
    };
    Ok(EvalMetrics {
        problems: task.problems.len(),
        pass_rate: passes as f64 / task.problems.len() as f64,
        mean_greedy_quality: quality_total / task.problems.len() as f64,
        preference_rate: rate,
    })
}

/// Everything summary.json records about a completed run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub scenario: Scenario,
    pub task_fingerprint: String,
    pub seed: u64,
    pub steps_total: u64,
    pub final_loss: f64,
    pub final_roles: BTreeMap<String, f64>,
    pub final_argmax_logprob: f64,
    pub eval: EvalMetrics,
    pub checkpoints: Vec<String>,
    pub dropped_probe_entries: usize,
    /// The resolved configuration this run executed.
    pub config: ExperimentConfig,
    /// The configuration document exactly as provided.
    pub config_text: String,
}

/// A completed run held in memory: the task it trained on, the training
/// output, and the final-policy evaluation.
pub struct CompletedRun {
    pub task: SyntheticTask,
    pub dataset_len: usize,
    pub dropped_probe_entries: usize,
    pub result: TrainResult,
    pub eval: EvalMetrics,
}

/// Generate data and train, without touching the filesystem.
pub fn run_in_memory(config: &ExperimentConfig) -> Result<CompletedRun> {
    let task = datagen::generate_task(&config.task.task_config(), sub_seed(config.seed, "task"))?;
    let dataset = datagen::gen_dataset(
        &task,
        sub_seed(config.seed, "dataset"),
        config.task.dataset_size,
    )?;
    let probe_report = datagen::build_probe(
        &task,
        &dataset,
        sub_seed(config.seed, "probe"),
        config.probe.size,
    )?;
    let policy = config.build_policy()?;
    let result = train(
        &config.train_config(),
        &dataset,
        &probe_report.probe,
        policy,
    )?;
    let eval = evaluate_policy(&task, &result.policy)?;
    Ok(CompletedRun {
        task,
        dataset_len: dataset.len(),
        dropped_probe_entries: probe_report.dropped,
        result,
        eval,
    })
}

/// Generate data, train, and write artifacts into `out_dir`. The directory
/// is created if needed and owned exclusively for the duration of the run.
pub fn run_experiment(
    config: &ExperimentConfig,
    config_text: &str,
    out_dir: &Path,
) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let _lock = RunLock::acquire(out_dir)?;

    let run = run_in_memory(config)?;
    if config.task.emit_dataset {
        // Regenerated rather than retained: generation is deterministic in
        // the sub-seeds.
        let dataset = datagen::gen_dataset(
            &run.task,
            sub_seed(config.seed, "dataset"),
            config.task.dataset_size,
        )?;
        datagen::write_dataset_jsonl(
            &out_dir.join(DATASET_FILE),
            &dataset,
            sub_seed(config.seed, "dataset"),
            run.task.scenario,
        )?;
        let probe_report = datagen::build_probe(
            &run.task,
            &dataset,
            sub_seed(config.seed, "probe"),
            config.probe.size,
        )?;
        datagen::write_probe_jsonl(
            &out_dir.join(PROBE_FILE),
            &probe_report.probe,
            sub_seed(config.seed, "probe"),
            run.task.scenario,
        )?;
    }

    run.result.trace.write_csv(&out_dir.join(TRACE_FILE))?;
    let checkpoints = write_phase_checkpoints(&run.result, out_dir)?;

    let last = run
        .result
        .trace
        .final_row()
        .ok_or_else(|| Error::numeric("trace has no rows"))?;
    let mut final_roles = BTreeMap::new();
    for (role, value) in run.result.trace.roles.iter().zip(&last.role_means) {
        final_roles.insert(role.name().to_string(), *value);
    }
    let summary = RunSummary {
        method: config.train.method,
        scenario: config.task.scenario,
        task_fingerprint: config.task_fingerprint(),
        seed: config.seed,
        steps_total: last.step,
        final_loss: last.loss,
        final_roles,
        final_argmax_logprob: last.argmax_logprob,
        eval: run.eval,
        checkpoints,
        dropped_probe_entries: run.dropped_probe_entries,
        config: config.clone(),
        config_text: config_text.to_string(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::schema(e.to_string()))?;
    fs::write(out_dir.join(SUMMARY_FILE), json)
        .map_err(|e| Error::io(out_dir.join(SUMMARY_FILE), e))?;
    Ok(summary)
}

fn write_phase_checkpoints(result: &TrainResult, out_dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (idx, (phase, policy)) in result.phase_checkpoints.iter().enumerate() {
        let name = format!("checkpoint_{}_{}.json", idx + 1, phase_name(*phase));
        policy.save(&out_dir.join(&name))?;
        names.push(name);
    }
    Ok(names)
}

fn phase_name(phase: Phase) -> &'static str {
    phase.name()
}

/// One method's row in the cross-method comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub final_loss: f64,
    pub final_roles: BTreeMap<String, f64>,
    pub final_argmax_logprob: f64,
    pub eval: EvalMetrics,
}

/// Cross-method comparison over runs that share a task fingerprint.
/// Rows appear in the fixed order sft, dpo, sd, apo.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task_fingerprint: String,
    pub methods: Vec<MethodReport>,
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(e.to_string()))
}

/// Tabulate completed runs into one comparison document.
pub fn emit_report(run_dirs: &[PathBuf]) -> Result<ComparisonReport> {
    if run_dirs.len() < 2 {
        return Err(Error::input("a report needs at least two completed runs"));
    }
    let summaries: Vec<RunSummary> = run_dirs
        .iter()
        .map(|d| read_summary(d))
        .collect::<Result<_>>()?;
    let fingerprint = summaries[0].task_fingerprint.clone();
    for s in &summaries[1..] {
        if s.task_fingerprint != fingerprint {
            return Err(Error::input(format!(
                "runs are not comparable: task fingerprints {} and {} differ",
                fingerprint, s.task_fingerprint
            )));
        }
    }
    let order = [Method::Sft, Method::Dpo, Method::Sd, Method::Apo];
    let mut methods = Vec::new();
    for want in order {
        for s in &summaries {
            if s.method == want {
                methods.push(MethodReport {
                    method: s.method,
                    final_loss: s.final_loss,
                    final_roles: s.final_roles.clone(),
                    final_argmax_logprob: s.final_argmax_logprob,
                    eval: s.eval.clone(),
                });
            }
        }
    }
    Ok(ComparisonReport {
        task_fingerprint: fingerprint,
        methods,
    })
}

/// JSON document for a co-ranking result, as written by the command-line
/// interface.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorankDocument {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub best: Option<usize>,
    pub worst: Option<usize>,
    pub no_separation: bool,
    pub damping: f64,
    pub iterations: usize,
}

impl CorankDocument {
    pub fn from_state(state: &ScoreState, damping: f64) -> Result<Self> {
        // A single solution cannot be separated from itself; report it the
        // same way as an all-equal score vector.
        let (best, worst, no_separation) = if state.s.len() < 2 {
            (None, None, true)
        } else {
            match select_extremes(state)? {
                crate::corank::Extremes::Separated { best, worst } => {
                    (Some(best), Some(worst), false)
                }
                crate::corank::Extremes::NoSeparation => (None, None, true),
            }
        };
        Ok(CorankDocument {
            s: state.s.clone(),
            t: state.t.clone(),
            best,
            worst,
            no_separation,
            damping,
            iterations: state.iteration,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::field_reassign_with_default)]
    fn small_config(method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 5;
        cfg.task.problems = 6;
        cfg.task.vocab_size = 10;
        cfg.task.dataset_size = 24;
        cfg.task.min_len = 3;
        cfg.task.max_len = 5;
        cfg.model.embed_dim = 4;
        cfg.model.hidden_dim = 8;
        cfg.train.method = method;
        cfg.train.steps = Some(30);
        cfg.train.probe_every = 10;
        cfg.train.batch_size = 4;
        cfg.probe.size = 6;
        cfg
    }

    #[test]
    fn defaults_parse_from_empty_document() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg.task.dataset_size, 2500);
        assert_eq!(cfg.probe.size, DEFAULT_PROBE_SIZE);
        assert_eq!(cfg.train.probe_every, 100);
        // Five epochs of 2500 examples at batch 8.
        assert_eq!(cfg.resolved_steps(), 5 * 313);
        assert_eq!(cfg.resolved_learning_rate(), 1e-3);
    }

    #[test]
    fn unknown_keys_are_schema_violations() {
        let err = parse_config(r#"{"task": {"vocab_sise": 16}}"#).unwrap_err();
        match err {
            Error::Schema(_) => {}
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(parse_config(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn run_writes_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(Method::Sft);
        let text = serde_json::to_string(&cfg).unwrap();
        let summary = run_experiment(&cfg, &text, dir.path()).unwrap();
        assert!(dir.path().join(TRACE_FILE).exists());
        assert!(dir.path().join(SUMMARY_FILE).exists());
        assert_eq!(summary.checkpoints, vec!["checkpoint_1_sft.json"]);
        let trace = crate::probe::DynamicsTrace::read_csv(&dir.path().join(TRACE_FILE)).unwrap();
        assert_eq!(trace.rows[0].step, 0);
        assert_eq!(summary.steps_total, 30);
        // The lock is released once the run completes.
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn two_phase_run_leaves_both_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(Method::Sd);
        let text = serde_json::to_string(&cfg).unwrap();
        let summary = run_experiment(&cfg, &text, dir.path()).unwrap();
        assert_eq!(
            summary.checkpoints,
            vec!["checkpoint_1_sft.json", "checkpoint_2_dpo.json"]
        );
        for name in &summary.checkpoints {
            assert!(dir.path().join(name).exists());
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = small_config(Method::Apo);
        let text = serde_json::to_string(&cfg).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, &text, a.path()).unwrap();
        run_experiment(&cfg, &text, b.path()).unwrap();
        let ta = fs::read(a.path().join(TRACE_FILE)).unwrap();
        let tb = fs::read(b.path().join(TRACE_FILE)).unwrap();
        assert_eq!(ta, tb);
        let ca = fs::read(a.path().join("checkpoint_1_apo.json")).unwrap();
        let cb = fs::read(b.path().join("checkpoint_1_apo.json")).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn locked_directory_rejects_a_second_run() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOCK_FILE), b"").unwrap();
        let cfg = small_config(Method::Sft);
        let err = run_experiment(&cfg, "{}", dir.path()).unwrap_err();
        match err {
            Error::Io { .. } => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn report_requires_matching_fingerprints() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg_a = small_config(Method::Sft);
        let mut cfg_b = small_config(Method::Apo);
        run_experiment(&cfg_a, "{}", dir_a.path()).unwrap();
        run_experiment(&cfg_b, "{}", dir_b.path()).unwrap();
        let report =
            emit_report(&[dir_a.path().to_path_buf(), dir_b.path().to_path_buf()]).unwrap();
        assert_eq!(report.methods.len(), 2);
        assert_eq!(report.methods[0].method, Method::Sft);
        assert_eq!(report.methods[1].method, Method::Apo);

        cfg_b.seed = 6;
        let dir_c = tempfile::tempdir().unwrap();
        run_experiment(&cfg_b, "{}", dir_c.path()).unwrap();
        assert!(emit_report(&[dir_a.path().to_path_buf(), dir_c.path().to_path_buf()]).is_err());
        assert!(emit_report(&[dir_a.path().to_path_buf()]).is_err());
    }
}
