//! Confidence probing: track mean log-probability per response role over
//! training and detect the squeezing effect.
//!
//! A probe set holds prompts with role-tagged response variants. At each
//! probe step the trainer records, for every role, the mean sequence
//! log-probability across entries, plus the mean log-probability of the
//! greedy-argmax output (the model's most confident sequence). The squeezing
//! signature is: every tracked role strictly down while the greedy output's
//! confidence strictly rises.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{Policy, Prompt, Sequence, Vocabulary};

/// Response roles tracked by the probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    YPlus,
    YMinus,
    YPlusSim,
    YMinusSim,
    YPlusH,
    YPlusL,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::YPlus,
        Role::YMinus,
        Role::YPlusSim,
        Role::YMinusSim,
        Role::YPlusH,
        Role::YPlusL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::YPlus => "y_plus",
            Role::YMinus => "y_minus",
            Role::YPlusSim => "y_plus_sim",
            Role::YMinusSim => "y_minus_sim",
            Role::YPlusH => "y_plus_h",
            Role::YPlusL => "y_plus_l",
        }
    }

    pub fn parse(name: &str) -> Option<Role> {
        Role::ALL.iter().copied().find(|r| r.name() == name)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One probed prompt with its role-tagged responses, parallel to the probe
/// set's role list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub prompt: Prompt,
    pub responses: Vec<Sequence>,
}

/// Prompts with role-tagged response variants whose confidence is traced
/// over training. All entries share the same role set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSet {
    roles: Vec<Role>,
    entries: Vec<ProbeEntry>,
    max_len: usize,
}

impl ProbeSet {
    pub fn new(roles: Vec<Role>, entries: Vec<ProbeEntry>, vocab: &Vocabulary) -> Result<Self> {
        if !roles.contains(&Role::YPlus) || !roles.contains(&Role::YMinus) {
            return Err(Error::input("probe roles must include y_plus and y_minus"));
        }
        let mut seen = Vec::new();
        for r in &roles {
            if seen.contains(r) {
                return Err(Error::input(format!("duplicate probe role {r}")));
            }
            seen.push(*r);
        }
        let mut max_len = 4usize;
        for (i, e) in entries.iter().enumerate() {
            if e.responses.len() != roles.len() {
                return Err(Error::input(format!(
                    "probe entry {i} has {} responses for {} roles",
                    e.responses.len(),
                    roles.len()
                )));
            }
            for s in &e.responses {
                s.validate_response(vocab)?;
                max_len = max_len.max(s.len() + 2);
            }
        }
        Ok(ProbeSet {
            roles,
            entries,
            max_len,
        })
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn entries(&self) -> &[ProbeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Length cap used when greedy-decoding the argmax sequence.
    pub fn decode_cap(&self) -> usize {
        self.max_len
    }

    /// The sequence attached to `role` in entry `idx`, if the role is
    /// tracked.
    pub fn response(&self, idx: usize, role: Role) -> Option<&Sequence> {
        let r = self.roles.iter().position(|&x| x == role)?;
        Some(&self.entries[idx].responses[r])
    }
}

/// One confidence measurement: per-role means plus the greedy-output mean.
#[derive(Clone, Debug)]
pub struct ConfidenceSample {
    pub role_means: Vec<f64>,
    pub argmax_logprob: f64,
}

/// Mean sequence log-probability per role over the probe set, plus the mean
/// log-probability of the greedy decode for each prompt. Entries are reduced
/// in index order, so results are deterministic.
pub fn trace_confidence(policy: &Policy, probe: &ProbeSet) -> Result<ConfidenceSample> {
    if probe.is_empty() {
        return Err(Error::input("probe set is empty"));
    }
    let n = probe.len() as f64;
    let mut role_means = vec![0.0; probe.roles.len()];
    let mut argmax = 0.0;
    for entry in &probe.entries {
        for (r, seq) in entry.responses.iter().enumerate() {
            role_means[r] += policy.seq_logprob(entry.prompt, seq)?;
        }
        let greedy = policy.greedy_decode(entry.prompt, probe.max_len)?;
        argmax += policy.seq_logprob(entry.prompt, &greedy)?;
    }
    for m in &mut role_means {
        *m /= n;
    }
    Ok(ConfidenceSample {
        role_means,
        argmax_logprob: argmax / n,
    })
}

/// Training phase a trace row was recorded under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sft,
    Dpo,
    Apo,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Sft => "sft",
            Phase::Dpo => "dpo",
            Phase::Apo => "apo",
        }
    }

    pub fn parse(name: &str) -> Option<Phase> {
        match name {
            "sft" => Some(Phase::Sft),
            "dpo" => Some(Phase::Dpo),
            "apo" => Some(Phase::Apo),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One dynamics-trace row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    pub role_means: Vec<f64>,
    pub argmax_logprob: f64,
}

/// Time series of per-role mean log-probability, one row per probe step.
/// Rows are strictly increasing in step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub roles: Vec<Role>,
    pub rows: Vec<TraceRow>,
}

impl DynamicsTrace {
    pub fn row_at(&self, step: u64) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.step == step)
    }

    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Mean log-probability of `role` at `step`, if both exist.
    pub fn value_at(&self, step: u64, role: Role) -> Option<f64> {
        let idx = self.roles.iter().position(|&r| r == role)?;
        self.row_at(step).map(|row| row.role_means[idx])
    }

    /// Render as CSV. Column set depends only on the probe role set; the
    /// header row is always present. Floats use shortest round-trip decimal
    /// form, so identical traces render byte-identically.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("step,phase,loss");
        for r in &self.roles {
            out.push(',');
            out.push_str(r.name());
        }
        out.push_str(",argmax_logprob\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}", row.step, row.phase, row.loss));
            for v in &row.role_means {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", row.argmax_logprob));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::input("trace csv is empty"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[0] != "step" || cols[1] != "phase" || cols[2] != "loss" {
            return Err(Error::input("trace csv header malformed"));
        }
        if cols[cols.len() - 1] != "argmax_logprob" {
            return Err(Error::input("trace csv missing argmax_logprob column"));
        }
        let roles: Vec<Role> = cols[3..cols.len() - 1]
            .iter()
            .map(|c| Role::parse(c).ok_or_else(|| Error::input(format!("unknown role column {c}"))))
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        let mut prev_step: Option<u64> = None;
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::input(format!("trace csv row {i} has wrong arity")));
            }
            let step: u64 = fields[0]
                .parse()
                .map_err(|_| Error::input(format!("trace csv row {i}: bad step")))?;
            if let Some(p) = prev_step {
                if step <= p {
                    return Err(Error::input("trace csv steps must be strictly increasing"));
                }
            }
            prev_step = Some(step);
            let phase = Phase::parse(fields[1])
                .ok_or_else(|| Error::input(format!("trace csv row {i}: bad phase")))?;
            let parse_f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::input(format!("trace csv row {i}: bad float {s:?}")))
            };
            let loss = parse_f(fields[2])?;
            let role_means = fields[3..fields.len() - 1]
                .iter()
                .map(|s| parse_f(s))
                .collect::<Result<Vec<f64>>>()?;
            let argmax_logprob = parse_f(fields[fields.len() - 1])?;
            // Tracked values are mean log-probabilities: finite and <= 0.
            if role_means
                .iter()
                .chain(std::iter::once(&argmax_logprob))
                .any(|v| !v.is_finite() || *v > 0.0)
            {
                return Err(Error::input(format!(
                    "trace csv row {i}: tracked values must be finite and non-positive"
                )));
            }
            rows.push(TraceRow {
                step,
                phase,
                loss,
                role_means,
                argmax_logprob,
            });
        }
        Ok(DynamicsTrace { roles, rows })
    }
}

/// Jitter tolerance: movements this small count as neither up nor down.
pub const SQUEEZE_DEAD_BAND: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoleDelta {
    pub role: Role,
    pub delta: f64,
}

/// Outcome of a squeeze check between two trace steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SqueezeReport {
    pub from_step: u64,
    pub to_step: u64,
    pub squeezed: bool,
    pub role_deltas: Vec<RoleDelta>,
    pub argmax_delta: f64,
}

/// Squeezed iff every tracked role's mean log-probability strictly decreased
/// from `from_step` to `to_step` while the greedy-output confidence strictly
/// increased, with a dead band of `SQUEEZE_DEAD_BAND` to ignore jitter.
pub fn detect_squeeze(
    trace: &DynamicsTrace,
    from_step: u64,
    to_step: u64,
) -> Result<SqueezeReport> {
    let from = trace
        .row_at(from_step)
        .ok_or_else(|| Error::input(format!("trace has no row at step {from_step}")))?;
    let to = trace
        .row_at(to_step)
        .ok_or_else(|| Error::input(format!("trace has no row at step {to_step}")))?;
    let role_deltas: Vec<RoleDelta> = trace
        .roles
        .iter()
        .enumerate()
        .map(|(i, &role)| RoleDelta {
            role,
            delta: to.role_means[i] - from.role_means[i],
        })
        .collect();
    let argmax_delta = to.argmax_logprob - from.argmax_logprob;
    let squeezed = role_deltas.iter().all(|d| d.delta < -SQUEEZE_DEAD_BAND)
        && argmax_delta > SQUEEZE_DEAD_BAND;
    Ok(SqueezeReport {
        from_step,
        to_step,
        squeezed,
        role_deltas,
        argmax_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::Policy;

    fn vocab4() -> Vocabulary {
        Vocabulary::new(4, 0).unwrap()
    }

    fn probe_two_roles(vocab: &Vocabulary) -> ProbeSet {
        let entries = vec![
            ProbeEntry {
                prompt: Prompt(0),
                responses: vec![Sequence::new(vec![1, 2, 0]), Sequence::new(vec![3, 1, 0])],
            },
            ProbeEntry {
                prompt: Prompt(1),
                responses: vec![Sequence::new(vec![2, 2, 0]), Sequence::new(vec![1, 3, 0])],
            },
        ];
        ProbeSet::new(vec![Role::YPlus, Role::YMinus], entries, vocab).unwrap()
    }

    #[test]
    fn probe_requires_core_roles() {
        let v = vocab4();
        let entries = vec![ProbeEntry {
            prompt: Prompt(0),
            responses: vec![Sequence::new(vec![1, 0])],
        }];
        assert!(ProbeSet::new(vec![Role::YPlus], entries, &v).is_err());
    }

    #[test]
    fn uniform_policy_roles_share_one_value() {
        let v = vocab4();
        let p = Policy::tabular(v, 2, 2).unwrap();
        let probe = probe_two_roles(&v);
        let sample = trace_confidence(&p, &probe).unwrap();
        for m in &sample.role_means {
            assert!((m + 3.0 * 4.0f64.ln()).abs() < 1e-12, "mean = {m}");
        }
    }

    #[test]
    fn deterministic_y_plus_dominates() {
        let v = vocab4();
        let mut p = Policy::tabular(v, 2, 2).unwrap();
        for (prompt, (a, b)) in [(0u32, (1u32, 2u32)), (1, (2, 2))] {
            let big = 60.0;
            let mut row = [0.0; 4];
            row[a as usize] = big;
            p.set_context_logits(Prompt(prompt), &[], &row).unwrap();
            let mut row = [0.0; 4];
            row[b as usize] = big;
            p.set_context_logits(Prompt(prompt), &[a], &row).unwrap();
            let row = [big, 0.0, 0.0, 0.0];
            p.set_context_logits(Prompt(prompt), &[a, b], &row).unwrap();
        }
        let probe = probe_two_roles(&v);
        let sample = trace_confidence(&p, &probe).unwrap();
        assert!(
            sample.role_means[0].abs() < 1e-9,
            "y_plus = {}",
            sample.role_means[0]
        );
        assert!(
            sample.role_means[1] < -1.0,
            "y_minus = {}",
            sample.role_means[1]
        );
    }

    #[test]
    fn means_match_per_entry_oracle() {
        let v = vocab4();
        let mut p = Policy::feedforward(v, 2, 2, 3, 5).unwrap();
        p.randomize(42, 0.2);
        let probe = probe_two_roles(&v);
        let sample = trace_confidence(&p, &probe).unwrap();
        for (r, _) in probe.roles().iter().enumerate() {
            let mut mean = 0.0;
            for e in probe.entries() {
                mean += p.seq_logprob(e.prompt, &e.responses[r]).unwrap();
            }
            mean /= probe.len() as f64;
            assert!((sample.role_means[r] - mean).abs() < 1e-12);
        }
    }

    fn synthetic_trace(rows: Vec<(u64, Vec<f64>, f64)>) -> DynamicsTrace {
        DynamicsTrace {
            roles: vec![Role::YPlus, Role::YMinus],
            rows: rows
                .into_iter()
                .map(|(step, role_means, argmax_logprob)| TraceRow {
                    step,
                    phase: Phase::Dpo,
                    loss: 0.5,
                    role_means,
                    argmax_logprob,
                })
                .collect(),
        }
    }

    #[test]
    fn detect_squeeze_on_constructed_traces() {
        let t = synthetic_trace(vec![
            (0, vec![-1.0, -1.0], -1.0),
            (100, vec![-2.0, -2.0], -0.5),
        ]);
        let report = detect_squeeze(&t, 0, 100).unwrap();
        assert!(report.squeezed);
        assert!((report.argmax_delta - 0.5).abs() < 1e-12);

        let t = synthetic_trace(vec![
            (0, vec![-1.0, -1.0], -1.0),
            (100, vec![-0.5, -2.0], -0.5),
        ]);
        assert!(!detect_squeeze(&t, 0, 100).unwrap().squeezed);
    }

    #[test]
    fn detect_squeeze_requires_existing_steps() {
        let t = synthetic_trace(vec![(0, vec![-1.0, -1.0], -1.0)]);
        assert!(detect_squeeze(&t, 0, 50).is_err());
    }

    #[test]
    fn dead_band_ignores_jitter() {
        let t = synthetic_trace(vec![
            (0, vec![-1.0, -1.0], -1.0),
            (100, vec![-1.0 - 1e-9, -2.0], -0.5),
        ]);
        assert!(!detect_squeeze(&t, 0, 100).unwrap().squeezed);
    }

    #[test]
    fn trace_csv_roundtrip_is_exact() {
        let t = synthetic_trace(vec![
            (0, vec![-4.158883083359672, -1.25e-3], -19.5),
            (100, vec![-2.0, -3.0], -0.5),
        ]);
        let csv = t.to_csv_string();
        let back = DynamicsTrace::from_csv_str(&csv).unwrap();
        assert_eq!(back.to_csv_string(), csv);
        assert_eq!(back.roles, t.roles);
        assert_eq!(back.rows[0].loss.to_bits(), t.rows[0].loss.to_bits());
        assert_eq!(
            back.rows[0].role_means[0].to_bits(),
            t.rows[0].role_means[0].to_bits()
        );
    }

    #[test]
    fn trace_csv_rejects_non_monotone_steps() {
        let t = synthetic_trace(vec![(0, vec![-1.0, -1.0], -1.0)]);
        let mut csv = t.to_csv_string();
        csv.push_str("0,dpo,0.5,-1,-1,-1\n");
        assert!(DynamicsTrace::from_csv_str(&csv).is_err());
    }
}
