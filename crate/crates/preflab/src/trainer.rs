//! Seeded gradient-descent training under the four schedules: supervised
//! only, pairwise only, supervised-then-pairwise, and adaptive.
//!
//! A run is deterministic given its config, dataset, probe set, and initial
//! policy: identical seeds produce bit-identical traces. Batch order
//! reshuffles every epoch from a per-phase stream derived from the run seed,
//! so the supervised half of a two-phase run is step-for-step identical to a
//! pure supervised run with the same seed and phase length.
//!
//! For the pairwise and adaptive phases the reference is snapshotted from
//! the incoming policy at phase start; in the two-phase schedule that means
//! the post-supervised policy. Divergence aborts the run rather than being
//! clipped away (an optional max-norm switch exists but defaults to off, to
//! keep the dynamics faithful).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_gradient, loss_value, AlphaMode, LossSpec, PreferenceExample};
use crate::math::sub_seed;
use crate::probe::{trace_confidence, DynamicsTrace, Phase, ProbeSet, TraceRow};
use crate::seqmodel::{Policy, ReferencePolicy};

/// Which training schedule to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sft,
    Dpo,
    /// Supervised phase followed by a pairwise phase whose reference is the
    /// post-supervised policy.
    Sd,
    Apo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::Dpo => "dpo",
            Method::Sd => "sd",
            Method::Apo => "apo",
        }
    }

    fn phases(self) -> Vec<Phase> {
        match self {
            Method::Sft => vec![Phase::Sft],
            Method::Dpo => vec![Phase::Dpo],
            Method::Sd => vec![Phase::Sft, Phase::Dpo],
            Method::Apo => vec![Phase::Apo],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "adam")]
    Adam,
}

/// Adam moment hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Everything a training run needs besides the data and the policy.
/// `steps` counts optimizer updates; for the two-phase schedule it is the
/// per-phase budget.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub probe_every: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub alpha_mode: AlphaMode,
    /// Optional max-norm gradient clip. Off by default.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn new(method: Method) -> Self {
        TrainConfig {
            method,
            steps: 500,
            batch_size: 8,
            learning_rate: 1e-3,
            beta: 0.1,
            probe_every: 100,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            alpha_mode: AlphaMode::StopGradient,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::input("steps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be positive"));
        }
        let lr_valid = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        if !lr_valid {
            return Err(Error::input("learning_rate must be positive"));
        }
        let beta_valid = self.beta.is_finite() && self.beta > 0.0;
        if !beta_valid {
            return Err(Error::input("beta must be positive"));
        }
        if self.probe_every == 0 || self.probe_every > self.steps {
            return Err(Error::input("probe_every must be in 1..=steps"));
        }
        if let Some(c) = self.grad_clip {
            let valid = c.is_finite() && c > 0.0;
            if !valid {
                return Err(Error::input("grad_clip must be positive when set"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// First-order optimizer with owned state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    adam: AdamParams,
    state: Option<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, adam: AdamParams) -> Self {
        Optimizer {
            kind,
            lr,
            adam,
            state: None,
        }
    }

    /// One update in place. SGD: `p <- p - lr * g`. Adam: bias-corrected
    /// first/second-moment update with the configured hyperparameters.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::input("parameter and gradient shapes disagree"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite gradient"));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let st = self.state.get_or_insert_with(|| AdamState {
                    m: vec![0.0; params.len()],
                    v: vec![0.0; params.len()],
                    t: 0,
                });
                if st.m.len() != params.len() {
                    return Err(Error::input("optimizer state shape disagrees"));
                }
                st.t += 1;
                let b1 = self.adam.b1;
                let b2 = self.adam.b2;
                let c1 = 1.0 - b1.powi(st.t as i32);
                let c2 = 1.0 - b2.powi(st.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
                    let m_hat = st.m[i] / c1;
                    let v_hat = st.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.adam.eps);
                }
            }
        }
        Ok(())
    }
}

/// Output of a training run.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub policy: Policy,
    pub trace: DynamicsTrace,
    /// Minibatch loss at every update, in step order.
    pub losses: Vec<f64>,
    /// Reference snapshot used by the last pairwise/adaptive phase, if any.
    pub reference: Option<ReferencePolicy>,
    /// Policy snapshot at the end of each phase, in phase order.
    pub phase_checkpoints: Vec<(Phase, Policy)>,
}

fn spec_for(phase: Phase, config: &TrainConfig) -> LossSpec {
    match phase {
        Phase::Sft => LossSpec::sft(),
        Phase::Dpo => LossSpec::dpo(config.beta),
        Phase::Apo => LossSpec::apo(config.beta, config.alpha_mode),
    }
}

fn clip_max_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
}

/// Run the configured schedule. The trace contains one row per
/// `probe_every` steps plus step 0, every phase boundary, and the final
/// step.
pub fn train(
    config: &TrainConfig,
    dataset: &[PreferenceExample],
    probe: &ProbeSet,
    policy: Policy,
) -> Result<TrainResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("dataset must be nonempty"));
    }
    if probe.is_empty() {
        return Err(Error::input("probe set must be nonempty"));
    }
    for (i, ex) in dataset.iter().enumerate() {
        ex.validate(policy.vocab())
            .map_err(|e| Error::input(format!("dataset example {i}: {e}")))?;
    }

    let mut policy = policy;
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut phase_checkpoints: Vec<(Phase, Policy)> = Vec::new();
    let mut last_reference: Option<ReferencePolicy> = None;
    let n = dataset.len();
    let mut global_step: u64 = 0;

    let phases = config.method.phases();
    for (phase_idx, &phase) in phases.iter().enumerate() {
        let spec = spec_for(phase, config);
        let reference = match phase {
            Phase::Sft => None,
            Phase::Dpo | Phase::Apo => Some(policy.snapshot()),
        };
        if reference.is_some() {
            last_reference = reference.clone();
        }
        let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.adam);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, phase.name()));

        let record = |policy: &Policy, rows: &mut Vec<TraceRow>, step: u64| -> Result<()> {
            if rows.last().map(|r| r.step) == Some(step) {
                return Ok(());
            }
            let loss = loss_value(&spec, policy, reference.as_ref(), dataset)?;
            let sample = trace_confidence(policy, probe)?;
            rows.push(TraceRow {
                step,
                phase,
                loss,
                role_means: sample.role_means,
                argmax_logprob: sample.argmax_logprob,
            });
            Ok(())
        };

        if phase_idx == 0 {
            record(&policy, &mut rows, 0)?;
        }

        let mut order: Vec<usize> = (0..n).collect();
        let mut pos = n; // forces a shuffle on the first step
        for step_in_phase in 1..=config.steps {
            if pos >= n {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let end = (pos + config.batch_size).min(n);
            let batch: Vec<PreferenceExample> = order[pos..end]
                .iter()
                .map(|&i| dataset[i].clone())
                .collect();
            pos = end;

            let (loss, mut grad) = loss_gradient(&spec, &policy, reference.as_ref(), &batch)
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::numeric(format!("step {}: {msg}", global_step + 1))
                    }
                    other => other,
                })?;
            if let Some(c) = config.grad_clip {
                clip_max_norm(&mut grad, c);
            }
            optimizer.step(policy.params_mut(), &grad)?;
            global_step += 1;
            policy.set_step(global_step);
            losses.push(loss);

            if policy.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::numeric(format!(
                    "step {global_step}: parameters diverged"
                )));
            }
            if global_step.is_multiple_of(config.probe_every as u64)
                || step_in_phase == config.steps
            {
                record(&policy, &mut rows, global_step)?;
            }
        }
        phase_checkpoints.push((phase, policy.clone()));
    }

    Ok(TrainResult {
        policy,
        trace: DynamicsTrace {
            roles: probe.roles().to_vec(),
            rows,
        },
        losses,
        reference: last_reference,
        phase_checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{ProbeEntry, Role};
    use crate::seqmodel::{Prompt, Sequence, Vocabulary};

    fn vocab() -> Vocabulary {
        Vocabulary::new(5, 0).unwrap()
    }

    fn small_dataset() -> Vec<PreferenceExample> {
        vec![
            PreferenceExample::new(
                Prompt(0),
                Sequence::new(vec![1, 2, 0]),
                Sequence::new(vec![3, 4, 0]),
            )
            .unwrap(),
            PreferenceExample::new(
                Prompt(1),
                Sequence::new(vec![2, 2, 0]),
                Sequence::new(vec![4, 1, 0]),
            )
            .unwrap(),
        ]
    }

    fn small_probe() -> ProbeSet {
        let v = vocab();
        let entries = small_dataset()
            .into_iter()
            .map(|ex| ProbeEntry {
                prompt: ex.prompt,
                responses: vec![ex.preferred, ex.dispreferred],
            })
            .collect();
        ProbeSet::new(vec![Role::YPlus, Role::YMinus], entries, &v).unwrap()
    }

    fn small_policy(seed: u64) -> Policy {
        let mut p = Policy::feedforward(vocab(), 2, 2, 3, 6).unwrap();
        p.randomize(seed, 0.1);
        p
    }

    fn config(method: Method) -> TrainConfig {
        let mut c = TrainConfig::new(method);
        c.steps = 60;
        c.batch_size = 2;
        c.learning_rate = 0.05;
        c.probe_every = 20;
        c.seed = 7;
        c
    }

    #[test]
    fn sgd_step_matches_arithmetic() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, AdamParams::default());
        let mut p = [1.0, 2.0];
        opt.step(&mut p, &[10.0, -10.0]).unwrap();
        assert_eq!(p, [0.0, 3.0]);
    }

    #[test]
    fn adam_with_zero_gradient_is_identity() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, AdamParams::default());
        let mut p = [1.5, -2.5];
        for _ in 0..25 {
            opt.step(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, [1.5, -2.5]);
    }

    #[test]
    fn adam_constant_gradient_moves_lr_per_step() {
        // Closed form: with a constant gradient the bias-corrected moments
        // settle at g and g^2, so each step moves about lr in magnitude.
        let lr = 1e-3;
        let mut opt = Optimizer::new(OptimizerKind::Adam, lr, AdamParams::default());
        let mut p = [0.0, 10.0];
        for _ in 0..1000 {
            opt.step(&mut p, &[2.0, -0.5]).unwrap();
        }
        let expect = 1000.0 * lr;
        assert!((p[0] + expect).abs() < 0.05 * expect, "p0 = {}", p[0]);
        assert!(
            (p[1] - 10.0 - expect).abs() < 0.05 * expect,
            "p1 = {}",
            p[1]
        );
    }

    #[test]
    fn optimizer_rejects_non_finite_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, AdamParams::default());
        let mut p = [1.0];
        assert!(opt.step(&mut p, &[f64::NAN]).is_err());
    }

    #[test]
    fn config_validation_catches_bad_cadence() {
        let mut c = TrainConfig::new(Method::Sft);
        c.steps = 50;
        c.probe_every = 100;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sft_on_shared_target_raises_its_likelihood() {
        // Every example shares the same preferred response; descent must
        // raise its log-probability.
        let v = vocab();
        let dataset: Vec<PreferenceExample> = (0..2)
            .map(|p| {
                PreferenceExample::new(
                    Prompt(p),
                    Sequence::new(vec![1, 2, 0]),
                    Sequence::new(vec![3, 0]),
                )
                .unwrap()
            })
            .collect();
        let probe = ProbeSet::new(
            vec![Role::YPlus, Role::YMinus],
            dataset
                .iter()
                .map(|ex| ProbeEntry {
                    prompt: ex.prompt,
                    responses: vec![ex.preferred.clone(), ex.dispreferred.clone()],
                })
                .collect(),
            &v,
        )
        .unwrap();
        let policy = small_policy(3);
        let before: f64 = dataset
            .iter()
            .map(|ex| policy.seq_logprob(ex.prompt, &ex.preferred).unwrap())
            .sum();
        let result = train(&config(Method::Sft), &dataset, &probe, policy).unwrap();
        let after: f64 = dataset
            .iter()
            .map(|ex| result.policy.seq_logprob(ex.prompt, &ex.preferred).unwrap())
            .sum();
        assert!(after > before, "{after} vs {before}");
    }

    #[test]
    fn trace_structure_covers_cadence_and_boundaries() {
        let result = train(
            &config(Method::Sd),
            &small_dataset(),
            &small_probe(),
            small_policy(5),
        )
        .unwrap();
        let steps: Vec<u64> = result.trace.rows.iter().map(|r| r.step).collect();
        // steps=60 per phase, probe_every=20: rows at 0,20,40,60,80,100,120.
        assert_eq!(steps, vec![0, 20, 40, 60, 80, 100, 120]);
        assert_eq!(result.trace.rows[3].phase, Phase::Sft); // boundary row
        assert_eq!(result.trace.rows[4].phase, Phase::Dpo);
        assert_eq!(result.phase_checkpoints.len(), 2);
        // Two phase checkpoints: post-sft and post-dpo; the reference is the
        // post-sft snapshot.
        let post_sft = &result.phase_checkpoints[0].1;
        let reference = result.reference.as_ref().unwrap();
        assert_eq!(post_sft.params(), reference.as_policy().params());
    }

    #[test]
    fn trace_rows_strictly_increase_with_ragged_cadence() {
        let mut c = config(Method::Sft);
        c.steps = 50;
        c.probe_every = 20;
        let result = train(&c, &small_dataset(), &small_probe(), small_policy(5)).unwrap();
        let steps: Vec<u64> = result.trace.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 20, 40, 50]);
    }

    #[test]
    fn identical_seeds_give_bit_identical_runs() {
        let a = train(
            &config(Method::Apo),
            &small_dataset(),
            &small_probe(),
            small_policy(9),
        )
        .unwrap();
        let b = train(
            &config(Method::Apo),
            &small_dataset(),
            &small_probe(),
            small_policy(9),
        )
        .unwrap();
        assert_eq!(a.policy.params(), b.policy.params());
        assert_eq!(a.trace.to_csv_string(), b.trace.to_csv_string());
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn sd_supervised_half_matches_pure_sft_run() {
        let sd = train(
            &config(Method::Sd),
            &small_dataset(),
            &small_probe(),
            small_policy(11),
        )
        .unwrap();
        let sft = train(
            &config(Method::Sft),
            &small_dataset(),
            &small_probe(),
            small_policy(11),
        )
        .unwrap();
        assert_eq!(
            sd.phase_checkpoints[0].1.params(),
            sft.policy.params(),
            "supervised halves diverged"
        );
        assert_eq!(&sd.losses[..60], &sft.losses[..]);
    }

    #[test]
    fn reference_is_untouched_during_pairwise_phase() {
        let init = small_policy(13);
        let init_params = init.params().to_vec();
        let result = train(&config(Method::Dpo), &small_dataset(), &small_probe(), init).unwrap();
        let reference = result.reference.unwrap();
        assert_eq!(reference.as_policy().params(), &init_params[..]);
        assert_ne!(result.policy.params(), &init_params[..]);
    }

    #[test]
    fn divergence_aborts_with_step_context() {
        // Adam with eps = 0 divides 0/0 on any zero-gradient coordinate;
        // tabular policies always have untouched contexts, so the very first
        // update poisons the parameters and the run must abort.
        let mut c = config(Method::Sft);
        c.adam.eps = 0.0;
        let mut policy = Policy::tabular(vocab(), 2, 2).unwrap();
        policy.randomize(15, 0.1);
        let err = train(&c, &small_dataset(), &small_probe(), policy).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("step"), "msg = {msg}"),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }
}
