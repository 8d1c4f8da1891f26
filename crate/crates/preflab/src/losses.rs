//! The three training objectives and their exact parameter gradients.
//!
//! All losses reduce over the batch by arithmetic mean. The pairwise
//! objective is evaluated as `softplus(-beta * z)` on the log-ratio margin
//! `z`, never through the probability ratio itself: the two forms are
//! mathematically identical and the ratio overflows.
//!
//! The adaptive objective mixes the pairwise and likelihood terms per
//! example, weighted by the geometric-mean token confidence `alpha` on the
//! preferred response. By default `alpha` is treated as a constant during
//! differentiation; a differentiated mode exists for ablation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::seqmodel::{Policy, Prompt, ReferencePolicy, Sequence, Vocabulary};

/// One preference triple: a prompt with a preferred and a dispreferred
/// response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub prompt: Prompt,
    pub preferred: Sequence,
    pub dispreferred: Sequence,
}

impl PreferenceExample {
    pub fn new(prompt: Prompt, preferred: Sequence, dispreferred: Sequence) -> Result<Self> {
        if preferred == dispreferred {
            return Err(Error::input(
                "preferred and dispreferred responses must differ",
            ));
        }
        Ok(PreferenceExample {
            prompt,
            preferred,
            dispreferred,
        })
    }

    /// Check both responses against the vocabulary's response invariants.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        self.preferred.validate_response(vocab)?;
        self.dispreferred.validate_response(vocab)?;
        if self.preferred == self.dispreferred {
            return Err(Error::input(
                "preferred and dispreferred responses must differ",
            ));
        }
        Ok(())
    }
}

/// Which objective to optimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sft,
    Dpo,
    Apo,
}

/// How the adaptive mixing weight participates in differentiation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `alpha` is a constant weight at each step (default).
    #[default]
    StopGradient,
    /// Gradients also flow through `alpha`.
    Differentiated,
}

/// Loss selector plus its hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub beta: f64,
    pub alpha_mode: AlphaMode,
}

impl LossSpec {
    pub fn sft() -> Self {
        LossSpec {
            kind: LossKind::Sft,
            beta: 0.1,
            alpha_mode: AlphaMode::StopGradient,
        }
    }

    pub fn dpo(beta: f64) -> Self {
        LossSpec {
            kind: LossKind::Dpo,
            beta,
            alpha_mode: AlphaMode::StopGradient,
        }
    }

    pub fn apo(beta: f64, alpha_mode: AlphaMode) -> Self {
        LossSpec {
            kind: LossKind::Apo,
            beta,
            alpha_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let valid = self.beta.is_finite() && self.beta > 0.0;
        if !valid {
            return Err(Error::input(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

fn require_nonempty(batch: &[PreferenceExample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("batch must be nonempty"));
    }
    Ok(())
}

/// Negative mean log-likelihood of the preferred responses. Always >= 0.
pub fn sft_loss(policy: &Policy, batch: &[PreferenceExample]) -> Result<f64> {
    require_nonempty(batch)?;
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let lp = policy.seq_logprob(ex.prompt, &ex.preferred)?;
        let term = -lp;
        if !term.is_finite() {
            return Err(Error::numeric(format!(
                "example {i}: non-finite likelihood term"
            )));
        }
        total += term;
    }
    Ok(total / batch.len() as f64)
}

/// Per-example log-ratio margin
/// `z = [log pi(y+) - log ref(y+)] - [log pi(y-) - log ref(y-)]`.
fn margin(
    policy: &Policy,
    reference: &ReferencePolicy,
    ex: &PreferenceExample,
) -> Result<(f64, f64)> {
    let lp_plus = policy.seq_logprob(ex.prompt, &ex.preferred)?;
    let lp_minus = policy.seq_logprob(ex.prompt, &ex.dispreferred)?;
    let ref_plus = reference.seq_logprob(ex.prompt, &ex.preferred)?;
    let ref_minus = reference.seq_logprob(ex.prompt, &ex.dispreferred)?;
    Ok(((lp_plus - ref_plus) - (lp_minus - ref_minus), lp_plus))
}

/// Pairwise preference loss: mean of `softplus(-beta * z)`. Always > 0 for
/// finite margins.
pub fn dpo_loss(
    policy: &Policy,
    reference: &ReferencePolicy,
    batch: &[PreferenceExample],
    beta: f64,
) -> Result<f64> {
    require_nonempty(batch)?;
    let beta_valid = beta.is_finite() && beta > 0.0;
    if !beta_valid {
        return Err(Error::input(format!("beta must be positive, got {beta}")));
    }
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let (z, _) = margin(policy, reference, ex)?;
        let term = softplus(-beta * z);
        if !term.is_finite() {
            return Err(Error::numeric(format!(
                "example {i}: non-finite pairwise term (margin {z})"
            )));
        }
        total += term;
    }
    Ok(total / batch.len() as f64)
}

/// Geometric mean of the per-token probabilities the policy assigns to the
/// preferred response: `exp(seq_logprob / T)` over its `T` tokens. In [0, 1].
pub fn apo_alpha(policy: &Policy, prompt: Prompt, preferred: &Sequence) -> Result<f64> {
    let lp = policy.seq_logprob(prompt, preferred)?;
    Ok((lp / preferred.len() as f64).exp())
}

/// Adaptive loss: per example `alpha * pairwise + (1 - alpha) * likelihood`,
/// averaged over the batch.
pub fn apo_loss(
    policy: &Policy,
    reference: &ReferencePolicy,
    batch: &[PreferenceExample],
    spec: &LossSpec,
) -> Result<f64> {
    require_nonempty(batch)?;
    spec.validate()?;
    if spec.kind != LossKind::Apo {
        return Err(Error::input("loss spec kind must be apo"));
    }
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let (z, lp_plus) = margin(policy, reference, ex)?;
        let alpha = (lp_plus / ex.preferred.len() as f64).exp();
        let dpo_term = softplus(-spec.beta * z);
        let sft_term = -lp_plus;
        let term = alpha * dpo_term + (1.0 - alpha) * sft_term;
        if !term.is_finite() {
            return Err(Error::numeric(format!(
                "example {i}: non-finite adaptive term"
            )));
        }
        total += term;
    }
    Ok(total / batch.len() as f64)
}

/// Evaluate whichever loss the spec selects. The reference is required for
/// the pairwise and adaptive kinds and ignored for plain likelihood.
pub fn loss_value(
    spec: &LossSpec,
    policy: &Policy,
    reference: Option<&ReferencePolicy>,
    batch: &[PreferenceExample],
) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        LossKind::Sft => sft_loss(policy, batch),
        LossKind::Dpo => {
            let r = reference.ok_or_else(|| Error::input("dpo loss requires a reference"))?;
            dpo_loss(policy, r, batch, spec.beta)
        }
        LossKind::Apo => {
            let r = reference.ok_or_else(|| Error::input("apo loss requires a reference"))?;
            apo_loss(policy, r, batch, spec)
        }
    }
}

/// Exact gradient of the selected loss with respect to the policy
/// parameters, computed by reverse-mode accumulation through the policy.
/// Returns the loss value alongside the gradient.
pub fn loss_gradient(
    spec: &LossSpec,
    policy: &Policy,
    reference: Option<&ReferencePolicy>,
    batch: &[PreferenceExample],
) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    require_nonempty(batch)?;
    let mut grad = vec![0.0; policy.param_count()];
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        // Per-example scales on d(log pi(y+)) and d(log pi(y-)).
        let (term, scale_plus, scale_minus) = match spec.kind {
            LossKind::Sft => {
                let lp = policy.seq_logprob(ex.prompt, &ex.preferred)?;
                (-lp, -1.0 / n, 0.0)
            }
            LossKind::Dpo => {
                let r =
                    reference.ok_or_else(|| Error::input("dpo gradient requires a reference"))?;
                let (z, _) = margin(policy, r, ex)?;
                let sig = sigmoid(-spec.beta * z);
                let coef = spec.beta * sig / n;
                (softplus(-spec.beta * z), -coef, coef)
            }
            LossKind::Apo => {
                let r =
                    reference.ok_or_else(|| Error::input("apo gradient requires a reference"))?;
                let (z, lp_plus) = margin(policy, r, ex)?;
                let len = ex.preferred.len() as f64;
                let alpha = (lp_plus / len).exp();
                let sig = sigmoid(-spec.beta * z);
                let dpo_term = softplus(-spec.beta * z);
                let sft_term = -lp_plus;
                let mut s_plus = alpha * (-spec.beta * sig) - (1.0 - alpha);
                if spec.alpha_mode == AlphaMode::Differentiated {
                    // d alpha / d log pi(y+) = alpha / T
                    s_plus += (dpo_term - sft_term) * alpha / len;
                }
                let s_minus = alpha * spec.beta * sig;
                (
                    alpha * dpo_term + (1.0 - alpha) * sft_term,
                    s_plus / n,
                    s_minus / n,
                )
            }
        };
        if !term.is_finite() || !scale_plus.is_finite() || !scale_minus.is_finite() {
            return Err(Error::numeric(format!(
                "example {i}: non-finite loss term or gradient scale"
            )));
        }
        total += term;
        if scale_plus != 0.0 {
            policy.accumulate_logprob_grad(ex.prompt, &ex.preferred, scale_plus, &mut grad)?;
        }
        if scale_minus != 0.0 {
            policy.accumulate_logprob_grad(ex.prompt, &ex.dispreferred, scale_minus, &mut grad)?;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(format!(
                "example {i}: non-finite gradient contribution"
            )));
        }
    }
    Ok((total / n, grad))
}
