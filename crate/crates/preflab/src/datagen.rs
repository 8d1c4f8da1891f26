//! Synthetic preference tasks for the two scenarios, plus probe-set
//! construction with role-tagged response variants.
//!
//! Correctness is membership in an enumerated per-problem target set; it
//! stands in for test-suite passing. Quality is the token-cost sum under a
//! per-task cost table (lower is better); it stands in for measured
//! efficiency or complexity, and it admits strictly better alternatives by
//! construction. Both surrogates are exact and deterministic.
//!
//! Each problem's correct responses form a chain in which adjacent entries
//! differ in exactly one token, so single-token "similar" variants that
//! preserve correctness always exist.
//!
//! In the verifiable-optimum scenario a pair is (the canonical correct
//! response, a corrupted incorrect one). In the graded-quality scenario the
//! designated preferred response is mid-quality — never the best available —
//! and is paired with strictly worse correct responses, so a better response
//! always exists outside the pair.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PreferenceExample;
use crate::probe::{ProbeEntry, ProbeSet, Role};
use crate::seqmodel::{Prompt, Sequence, Vocabulary};

/// Corruption candidates generated per problem in the verifiable-optimum
/// scenario; bounds the number of distinct pairs a problem can contribute.
const CORRUPTION_POOL: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Correct answers are objectively verifiable; the preferred response is
    /// the canonical optimum.
    VerifiableOptimum,
    /// Responses are graded by quality and the preferred response is not the
    /// best available.
    GradedQuality,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::VerifiableOptimum => "verifiable_optimum",
            Scenario::GradedQuality => "graded_quality",
        }
    }

    /// Role set probed under this scenario.
    pub fn probe_roles(self) -> Vec<Role> {
        match self {
            Scenario::VerifiableOptimum => {
                vec![Role::YPlus, Role::YMinus, Role::YPlusSim, Role::YMinusSim]
            }
            Scenario::GradedQuality => vec![
                Role::YPlus,
                Role::YMinus,
                Role::YPlusSim,
                Role::YMinusSim,
                Role::YPlusH,
                Role::YPlusL,
            ],
        }
    }
}

/// Task shape knobs. Lengths count content tokens; the end token is
/// appended on top.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskConfig {
    pub scenario: Scenario,
    pub vocab_size: u32,
    pub end_token: u32,
    pub problems: usize,
    pub responses_per_problem: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            scenario: Scenario::VerifiableOptimum,
            vocab_size: 16,
            end_token: 0,
            problems: 200,
            responses_per_problem: 6,
            min_len: 4,
            max_len: 8,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::input("task vocabulary must have at least 4 tokens"));
        }
        if self.problems == 0 {
            return Err(Error::input("task needs at least one problem"));
        }
        if self.responses_per_problem < 3 {
            return Err(Error::input(
                "each problem needs at least 3 correct responses",
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::input("response length range is empty"));
        }
        Ok(())
    }
}

/// One synthetic problem: a prompt with its enumerated correct responses.
/// `correct` is in chain order (adjacent entries differ in one token);
/// `preferred_idx` designates the response used as y+ in every pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Problem {
    pub prompt: Prompt,
    pub correct: Vec<Sequence>,
    pub preferred_idx: usize,
}

/// A generated task: scenario, vocabulary, per-token costs, and problems.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub scenario: Scenario,
    pub vocab: Vocabulary,
    token_cost: Vec<f64>,
    pub problems: Vec<Problem>,
}

impl SyntheticTask {
    /// Token-cost sum of a response; lower is better. The end token costs
    /// nothing.
    pub fn quality(&self, seq: &Sequence) -> f64 {
        seq.tokens()
            .iter()
            .map(|&t| self.token_cost[t as usize])
            .sum()
    }

    pub fn is_correct(&self, problem: usize, seq: &Sequence) -> bool {
        self.problems[problem].correct.iter().any(|c| c == seq)
    }

    /// The designated preferred response for a problem.
    pub fn preferred(&self, problem: usize) -> &Sequence {
        let p = &self.problems[problem];
        &p.correct[p.preferred_idx]
    }

    /// Best (lowest) quality among the problem's correct responses.
    pub fn best_quality(&self, problem: usize) -> f64 {
        self.problems[problem]
            .correct
            .iter()
            .map(|s| self.quality(s))
            .fold(f64::INFINITY, f64::min)
    }

    /// Correct-response indices sorted by quality, best first.
    fn quality_ranks(&self, problem: usize) -> Vec<usize> {
        let p = &self.problems[problem];
        let mut idx: Vec<usize> = (0..p.correct.len()).collect();
        idx.sort_by(|&a, &b| {
            self.quality(&p.correct[a])
                .total_cmp(&self.quality(&p.correct[b]))
        });
        idx
    }

    /// Upper bound on distinct preference pairs `gen_dataset` can emit.
    pub fn available_pairs(&self) -> usize {
        match self.scenario {
            Scenario::VerifiableOptimum => self.problems.len() * CORRUPTION_POOL,
            Scenario::GradedQuality => self
                .problems
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let pref_q = self.quality(self.preferred(i));
                    p.correct
                        .iter()
                        .filter(|c| self.quality(c) > pref_q)
                        .count()
                })
                .sum(),
        }
    }
}

fn random_response(rng: &mut ChaCha8Rng, cfg: &TaskConfig) -> Sequence {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let mut toks: Vec<u32> = Vec::with_capacity(len + 1);
    for _ in 0..len {
        toks.push(random_content_token(rng, cfg.vocab_size, cfg.end_token));
    }
    toks.push(cfg.end_token);
    Sequence::new(toks)
}

fn random_content_token(rng: &mut ChaCha8Rng, vocab_size: u32, end_token: u32) -> u32 {
    loop {
        let t = rng.gen_range(0..vocab_size);
        if t != end_token {
            return t;
        }
    }
}

/// One-token substitution at a random content position.
fn perturb(rng: &mut ChaCha8Rng, seq: &Sequence, vocab_size: u32, end_token: u32) -> Sequence {
    let mut toks = seq.tokens().to_vec();
    let content = toks.len() - 1;
    let pos = rng.gen_range(0..content);
    loop {
        let t = random_content_token(rng, vocab_size, end_token);
        if t != toks[pos] {
            toks[pos] = t;
            break;
        }
    }
    Sequence::new(toks)
}

/// Build a seeded task. Problems get prompt ids 0..problems; each problem's
/// correct set is a substitution chain with pairwise-distinct members and,
/// in the graded scenario, pairwise-distinct qualities.
pub fn generate_task(cfg: &TaskConfig, seed: u64) -> Result<SyntheticTask> {
    cfg.validate()?;
    let vocab = Vocabulary::new(cfg.vocab_size, cfg.end_token)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut token_cost = vec![0.0; cfg.vocab_size as usize];
    for (t, c) in token_cost.iter_mut().enumerate() {
        if t as u32 != cfg.end_token {
            *c = rng.gen_range(0.1..1.0);
        }
    }
    let mut task = SyntheticTask {
        scenario: cfg.scenario,
        vocab,
        token_cost,
        problems: Vec::with_capacity(cfg.problems),
    };
    for p in 0..cfg.problems {
        let mut chain: Vec<Sequence> = vec![random_response(&mut rng, cfg)];
        let mut attempts = 0;
        while chain.len() < cfg.responses_per_problem {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::input(
                    "could not build a distinct correct-response chain; enlarge the vocabulary",
                ));
            }
            let cand = perturb(
                &mut rng,
                chain.last().unwrap(),
                cfg.vocab_size,
                cfg.end_token,
            );
            if chain.contains(&cand) {
                continue;
            }
            if cfg.scenario == Scenario::GradedQuality {
                let q = task.quality(&cand);
                if chain.iter().any(|c| (task.quality(c) - q).abs() < 1e-9) {
                    continue;
                }
            }
            chain.push(cand);
        }
        task.problems.push(Problem {
            prompt: Prompt(p as u32),
            correct: chain,
            preferred_idx: 0,
        });
        if cfg.scenario == Scenario::GradedQuality {
            // Designate the second-best response: mid-quality, never the
            // best, with strictly worse alternatives left to pair against.
            let pref = task.quality_ranks(p)[1];
            task.problems[p].preferred_idx = pref;
        }
    }
    Ok(task)
}

fn check_pair(task: &SyntheticTask, problem: usize, ex: &PreferenceExample) -> Result<()> {
    match task.scenario {
        Scenario::VerifiableOptimum => {
            if !task.is_correct(problem, &ex.preferred)
                || task.is_correct(problem, &ex.dispreferred)
            {
                return Err(Error::input(format!(
                    "problem {problem}: generated pair violates the correctness predicate"
                )));
            }
        }
        Scenario::GradedQuality => {
            let qp = task.quality(&ex.preferred);
            let qm = task.quality(&ex.dispreferred);
            if !task.is_correct(problem, &ex.preferred)
                || !task.is_correct(problem, &ex.dispreferred)
                || qp >= qm
                || task.best_quality(problem) >= qp
            {
                return Err(Error::input(format!(
                    "problem {problem}: generated pair violates the quality predicate"
                )));
            }
        }
    }
    Ok(())
}

/// Emit `size` distinct preference pairs, interleaved round-robin across
/// problems. Every emitted example is checked against its scenario's
/// defining predicate.
pub fn gen_dataset(task: &SyntheticTask, seed: u64, size: usize) -> Result<Vec<PreferenceExample>> {
    if size == 0 {
        return Err(Error::input("dataset size must be positive"));
    }
    let available = task.available_pairs();
    if size > available {
        return Err(Error::input(format!(
            "requested {size} pairs but only {available} distinct pairs are available"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_problem: Vec<Vec<PreferenceExample>> = Vec::with_capacity(task.problems.len());
    for (i, problem) in task.problems.iter().enumerate() {
        let preferred = task.preferred(i).clone();
        let mut pairs = Vec::new();
        match task.scenario {
            Scenario::VerifiableOptimum => {
                let mut pool: Vec<Sequence> = Vec::new();
                let mut attempts = 0;
                while pool.len() < CORRUPTION_POOL && attempts < 4000 {
                    attempts += 1;
                    let cand = perturb(
                        &mut rng,
                        &preferred,
                        task.vocab.size(),
                        task.vocab.end_token(),
                    );
                    if task.is_correct(i, &cand) || pool.contains(&cand) {
                        continue;
                    }
                    pool.push(cand);
                }
                for minus in pool {
                    pairs.push(PreferenceExample::new(
                        problem.prompt,
                        preferred.clone(),
                        minus,
                    )?);
                }
            }
            Scenario::GradedQuality => {
                let pref_q = task.quality(&preferred);
                // Worst first, so the hardest contrast appears earliest.
                let mut worse: Vec<&Sequence> = problem
                    .correct
                    .iter()
                    .filter(|c| task.quality(c) > pref_q)
                    .collect();
                worse.sort_by(|a, b| task.quality(b).total_cmp(&task.quality(a)));
                for minus in worse {
                    pairs.push(PreferenceExample::new(
                        problem.prompt,
                        preferred.clone(),
                        minus.clone(),
                    )?);
                }
            }
        }
        per_problem.push(pairs);
    }
    let mut dataset = Vec::with_capacity(size);
    let mut round = 0;
    while dataset.len() < size {
        let mut emitted = false;
        for (i, pairs) in per_problem.iter().enumerate() {
            if dataset.len() == size {
                break;
            }
            if let Some(ex) = pairs.get(round) {
                check_pair(task, i, ex)?;
                dataset.push(ex.clone());
                emitted = true;
            }
        }
        if !emitted {
            return Err(Error::input(
                "ran out of distinct pairs while assembling the dataset",
            ));
        }
        round += 1;
    }
    Ok(dataset)
}

/// Probe-set construction outcome; `dropped` counts problems skipped because
/// a required variant was unavailable.
#[derive(Debug)]
pub struct ProbeBuildReport {
    pub probe: ProbeSet,
    pub dropped: usize,
}

/// Attach role-tagged variants to (up to `max_entries`) problems present in
/// the dataset.
///
/// Similar variants are single-token substitutions that preserve the
/// correctness class where possible (chain neighbors are used first). In
/// the graded scenario, y_plus_h is a strictly better-quality correct
/// response and y_plus_l a strictly worse one, both distinct from the pair.
pub fn build_probe(
    task: &SyntheticTask,
    dataset: &[PreferenceExample],
    seed: u64,
    max_entries: usize,
) -> Result<ProbeBuildReport> {
    if dataset.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    if max_entries == 0 {
        return Err(Error::input("probe size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // First dispreferred response seen per problem, in dataset order.
    let mut first_minus: BTreeMap<u32, &Sequence> = BTreeMap::new();
    for ex in dataset {
        first_minus.entry(ex.prompt.0).or_insert(&ex.dispreferred);
    }
    let mut problem_ids: Vec<u32> = first_minus.keys().copied().collect();
    if problem_ids.len() > max_entries {
        problem_ids.shuffle(&mut rng);
        problem_ids.truncate(max_entries);
        problem_ids.sort_unstable();
    }

    let roles = task.scenario.probe_roles();
    let mut entries = Vec::new();
    let mut dropped = 0usize;
    for pid in problem_ids {
        let i = pid as usize;
        let problem = &task.problems[i];
        let chain = &problem.correct;
        let y_plus = task.preferred(i).clone();
        let y_minus = (*first_minus[&pid]).clone();
        match build_entry(task, i, problem, chain, y_plus, y_minus, &roles, &mut rng) {
            Some(entry) => entries.push(entry),
            None => dropped += 1,
        }
    }
    if entries.is_empty() {
        return Err(Error::input(
            "no probe entries could be built from this dataset",
        ));
    }
    let probe = ProbeSet::new(roles, entries, &task.vocab)?;
    Ok(ProbeBuildReport { probe, dropped })
}

#[allow(clippy::too_many_arguments)]
fn build_entry(
    task: &SyntheticTask,
    problem_idx: usize,
    problem: &Problem,
    chain: &[Sequence],
    y_plus: Sequence,
    y_minus: Sequence,
    roles: &[Role],
    rng: &mut ChaCha8Rng,
) -> Option<ProbeEntry> {
    let mut used: Vec<Sequence> = vec![y_plus.clone(), y_minus.clone()];

    // Claim the rank-constrained roles first; the similar variants have a
    // perturbation fallback and are filled afterwards.
    let y_plus_h = if roles.contains(&Role::YPlusH) {
        let best = task.quality_ranks(problem_idx)[0];
        let cand = problem.correct[best].clone();
        if task.quality(&cand) < task.quality(&y_plus) && !used.contains(&cand) {
            used.push(cand.clone());
            Some(cand)
        } else {
            return None;
        }
    } else {
        None
    };
    let y_plus_l = if roles.contains(&Role::YPlusL) {
        // Strictly worse-quality correct response distinct from the
        // dispreferred one.
        let pref_q = task.quality(&y_plus);
        let worst_free = chain
            .iter()
            .filter(|c| task.quality(c) > pref_q && !used.contains(c))
            .max_by(|a, b| task.quality(a).total_cmp(&task.quality(b)))?
            .clone();
        used.push(worst_free.clone());
        Some(worst_free)
    } else {
        None
    };

    // Prefer a chain neighbor (correct, one token away); fall back to a
    // fresh perturbation when no neighbor is free.
    let similar = |of: &Sequence, used: &mut Vec<Sequence>, rng: &mut ChaCha8Rng| {
        let at = chain.iter().position(|c| c == of);
        if let Some(at) = at {
            for cand in [at + 1, at.wrapping_sub(1)] {
                if let Some(c) = chain.get(cand) {
                    if !used.contains(c) {
                        used.push(c.clone());
                        return Some(c.clone());
                    }
                }
            }
        }
        for _ in 0..200 {
            let cand = perturb(rng, of, task.vocab.size(), task.vocab.end_token());
            if !used.contains(&cand) && !task.is_correct(problem_idx, &cand) {
                used.push(cand.clone());
                return Some(cand);
            }
        }
        None
    };

    let mut responses: Vec<Sequence> = Vec::with_capacity(roles.len());
    for &role in roles {
        let seq = match role {
            Role::YPlus => Some(y_plus.clone()),
            Role::YMinus => Some(y_minus.clone()),
            Role::YPlusSim => similar(&y_plus, &mut used, rng),
            Role::YMinusSim => similar(&y_minus, &mut used, rng),
            Role::YPlusH => y_plus_h.clone(),
            Role::YPlusL => y_plus_l.clone(),
        };
        responses.push(seq?);
    }

    // All roles pairwise distinct.
    for a in 0..responses.len() {
        for b in (a + 1)..responses.len() {
            if responses[a] == responses[b] {
                return None;
            }
        }
    }
    Some(ProbeEntry {
        prompt: problem.prompt,
        responses,
    })
}

// ---------------------------------------------------------------------------
// JSON-lines serialization. Files carry the generator seed and scenario tag
// in a leading header record.

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    #[serde(rename = "type")]
    record_type: String,
    kind: String,
    seed: u64,
    scenario: Scenario,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roles: Option<Vec<Role>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    prompt: u32,
    preferred: Vec<u32>,
    dispreferred: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct ProbeLine {
    prompt: u32,
    roles: BTreeMap<String, Vec<u32>>,
}

pub fn write_dataset_jsonl(
    path: &Path,
    dataset: &[PreferenceExample],
    seed: u64,
    scenario: Scenario,
) -> Result<()> {
    let mut out = String::new();
    let header = JsonlHeader {
        record_type: "header".into(),
        kind: "dataset".into(),
        seed,
        scenario,
        count: dataset.len(),
        roles: None,
    };
    out.push_str(&serde_json::to_string(&header).map_err(|e| Error::schema(e.to_string()))?);
    out.push('\n');
    for ex in dataset {
        let line = DatasetLine {
            prompt: ex.prompt.0,
            preferred: ex.preferred.tokens().to_vec(),
            dispreferred: ex.dispreferred.tokens().to_vec(),
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::schema(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_dataset_jsonl(path: &Path) -> Result<(Vec<PreferenceExample>, u64, Scenario)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: JsonlHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::input("dataset file is empty"))?,
    )
    .map_err(|e| Error::schema(format!("dataset header: {e}")))?;
    let mut dataset = Vec::new();
    for line in lines {
        let rec: DatasetLine =
            serde_json::from_str(line).map_err(|e| Error::schema(format!("dataset line: {e}")))?;
        dataset.push(PreferenceExample::new(
            Prompt(rec.prompt),
            Sequence::new(rec.preferred),
            Sequence::new(rec.dispreferred),
        )?);
    }
    Ok((dataset, header.seed, header.scenario))
}

pub fn write_probe_jsonl(
    path: &Path,
    probe: &ProbeSet,
    seed: u64,
    scenario: Scenario,
) -> Result<()> {
    let mut out = String::new();
    let header = JsonlHeader {
        record_type: "header".into(),
        kind: "probe".into(),
        seed,
        scenario,
        count: probe.len(),
        roles: Some(probe.roles().to_vec()),
    };
    out.push_str(&serde_json::to_string(&header).map_err(|e| Error::schema(e.to_string()))?);
    out.push('\n');
    for entry in probe.entries() {
        let mut roles = BTreeMap::new();
        for (r, seq) in probe.roles().iter().zip(&entry.responses) {
            roles.insert(r.name().to_string(), seq.tokens().to_vec());
        }
        let line = ProbeLine {
            prompt: entry.prompt.0,
            roles,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::schema(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_probe_jsonl(path: &Path, vocab: &Vocabulary) -> Result<ProbeSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header: JsonlHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::input("probe file is empty"))?,
    )
    .map_err(|e| Error::schema(format!("probe header: {e}")))?;
    let roles = header
        .roles
        .ok_or_else(|| Error::schema("probe header missing roles"))?;
    let mut entries = Vec::new();
    for line in lines {
        let rec: ProbeLine =
            serde_json::from_str(line).map_err(|e| Error::schema(format!("probe line: {e}")))?;
        let mut responses = Vec::with_capacity(roles.len());
        for r in &roles {
            let toks = rec
                .roles
                .get(r.name())
                .ok_or_else(|| Error::schema(format!("probe entry missing role {}", r.name())))?;
            responses.push(Sequence::new(toks.clone()));
        }
        entries.push(ProbeEntry {
            prompt: Prompt(rec.prompt),
            responses,
        });
    }
    ProbeSet::new(roles, entries, vocab)
}
