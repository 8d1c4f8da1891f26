//! Direct optimization over an explicit 3-action probability simplex.
//!
//! This module exhibits the structural gap between the likelihood and
//! pairwise objectives on a single comparison pair: the pairwise loss can be
//! driven to zero while the preferred action's probability stays bounded
//! away from one, whereas the likelihood loss forces it to one. The
//! optimization runs in logit space with softmax reparameterization, so the
//! simplex boundary is approached but only reached in the limit; "reaches
//! zero" claims are therefore checked as "below tolerance".
//!
//! The near-optimality certificate for the pairwise loss is the probability
//! ratio `r = (ref+ * pi-) / (ref- * pi+)`: the pairwise loss at unit
//! temperature is `ln(1 + r)`, so `r < tol` implies that loss is below
//! `tol`, and the zero-loss set `{r = 0}` does not depend on the temperature
//! at all.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

/// Distribution over three actions obtained by softmax of free logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexPolicy {
    pub logits: [f64; 3],
}

impl SimplexPolicy {
    pub fn from_distribution(dist: [f64; 3]) -> Result<Self> {
        validate_distribution(&dist)?;
        Ok(SimplexPolicy {
            logits: [dist[0].ln(), dist[1].ln(), dist[2].ln()],
        })
    }

    /// Softmax of the logits; sums to one within 1e-12.
    pub fn distribution(&self) -> [f64; 3] {
        let m = self
            .logits
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let e = [
            (self.logits[0] - m).exp(),
            (self.logits[1] - m).exp(),
            (self.logits[2] - m).exp(),
        ];
        let s = e[0] + e[1] + e[2];
        [e[0] / s, e[1] / s, e[2] / s]
    }
}

fn validate_distribution(dist: &[f64; 3]) -> Result<()> {
    if dist.iter().any(|&p| !p.is_finite() || p <= 0.0) {
        return Err(Error::input(
            "distribution entries must be strictly positive",
        ));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::input(format!("distribution sums to {sum}, not 1")));
    }
    Ok(())
}

fn validate_pair(pair: (usize, usize)) -> Result<()> {
    if pair.0 >= 3 || pair.1 >= 3 {
        return Err(Error::input("pair indices must be in 0..3"));
    }
    if pair.0 == pair.1 {
        return Err(Error::input(
            "preferred and dispreferred actions must differ",
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexLoss {
    Sft,
    Dpo,
}

/// Single-pair loss value on an explicit distribution.
pub fn simplex_loss(
    kind: SimplexLoss,
    reference: &[f64; 3],
    pair: (usize, usize),
    dist: &[f64; 3],
    beta: f64,
) -> f64 {
    match kind {
        SimplexLoss::Sft => -dist[pair.0].ln(),
        SimplexLoss::Dpo => {
            let z = (dist[pair.0].ln() - reference[pair.0].ln())
                - (dist[pair.1].ln() - reference[pair.1].ln());
            softplus(-beta * z)
        }
    }
}

/// The temperature-free near-optimality certificate for the pairwise loss.
pub fn pairwise_ratio(reference: &[f64; 3], pair: (usize, usize), dist: &[f64; 3]) -> f64 {
    (reference[pair.0] * dist[pair.1]) / (reference[pair.1] * dist[pair.0])
}

/// Result of a fixed-step gradient descent on the single-pair loss.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimplexOutcome {
    pub distribution: [f64; 3],
    pub loss: f64,
    pub gradient_norm: f64,
}

/// Plain gradient descent in logit space on the single-pair loss.
/// Deterministic: the outcome is a pure function of the arguments.
pub fn optimize_simplex(
    kind: SimplexLoss,
    reference: [f64; 3],
    pair: (usize, usize),
    init: [f64; 3],
    beta: f64,
    steps: usize,
    lr: f64,
) -> Result<SimplexOutcome> {
    validate_distribution(&reference)?;
    validate_distribution(&init)?;
    validate_pair(pair)?;
    let beta_valid = beta.is_finite() && beta > 0.0;
    if !beta_valid {
        return Err(Error::input("beta must be positive"));
    }
    let lr_valid = lr.is_finite() && lr > 0.0;
    if !lr_valid {
        return Err(Error::input("learning rate must be positive"));
    }
    let (plus, minus) = pair;
    let mut policy = SimplexPolicy::from_distribution(init)?;
    for _ in 0..steps {
        let dist = policy.distribution();
        let grad = match kind {
            SimplexLoss::Sft => {
                // d(-log p_plus)/d logit_k = p_k - [k == plus]
                let mut g = dist;
                g[plus] -= 1.0;
                g
            }
            SimplexLoss::Dpo => {
                let z = (dist[plus].ln() - reference[plus].ln())
                    - (dist[minus].ln() - reference[minus].ln());
                let coef = beta * sigmoid(-beta * z);
                let mut g = [0.0; 3];
                g[plus] = -coef;
                g[minus] = coef;
                g
            }
        };
        for (logit, g) in policy.logits.iter_mut().zip(&grad) {
            *logit -= lr * g;
        }
        if policy.logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::numeric("simplex logits diverged"));
        }
    }
    let dist = policy.distribution();
    let loss = simplex_loss(kind, &reference, pair, &dist, beta);
    let gnorm = {
        let d = policy.distribution();
        let g: [f64; 3] = match kind {
            SimplexLoss::Sft => {
                let mut g = d;
                g[plus] -= 1.0;
                g
            }
            SimplexLoss::Dpo => {
                let z =
                    (d[plus].ln() - reference[plus].ln()) - (d[minus].ln() - reference[minus].ln());
                let coef = beta * sigmoid(-beta * z);
                let mut g = [0.0; 3];
                g[plus] = -coef;
                g[minus] = coef;
                g
            }
        };
        g.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    Ok(SimplexOutcome {
        distribution: dist,
        loss,
        gradient_norm: gnorm,
    })
}

/// The reference row of the canonical three-action setup.
pub const CANONICAL_REFERENCE: [f64; 3] = [0.3, 0.2, 0.5];
/// The canonical comparison pair: action 0 preferred over action 1.
pub const CANONICAL_PAIR: (usize, usize) = (0, 1);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub distribution: [f64; 3],
    pub loss: f64,
    pub steps_run: usize,
}

/// Outcome of the two-sided verification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub beta: f64,
    pub tolerance: f64,
    pub reference: [f64; 3],
    pub pair: (usize, usize),
    pub dpo: OptimizationSummary,
    /// Near-optimality certificate for the pairwise run (see module docs).
    pub dpo_ratio: f64,
    /// Pairwise loss of the found distribution at unit temperature,
    /// `ln(1 + ratio)`; below tolerance whenever the certificate holds.
    pub dpo_loss_unit_beta: f64,
    /// Likelihood loss of the distribution the pairwise run found.
    pub sft_loss_at_dpo_optimum: f64,
    pub sft: OptimizationSummary,
    /// (clause name, holds) in a fixed order; `pass` is their conjunction.
    pub clauses: Vec<(String, bool)>,
    pub pass: bool,
}

impl CounterexampleReport {
    pub fn failed_clauses(&self) -> Vec<&str> {
        self.clauses
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(name, _)| name.as_str())
            .collect()
    }
}

/// Run both optimizations on the canonical three-action setup and check the
/// structural claims; see `verify_counterexample_with`.
pub fn verify_counterexample(beta: f64, tolerance: f64) -> Result<CounterexampleReport> {
    verify_counterexample_with(CANONICAL_REFERENCE, CANONICAL_PAIR, beta, tolerance)
}

/// Drive the pairwise loss toward its optimum from the reference and the
/// likelihood loss from uniform, then assert:
///
/// 1. the pairwise run is near-optimal (`ratio < tolerance`, which puts the
///    unit-temperature loss below tolerance) with the dispreferred action's
///    probability below tolerance,
/// 2. the preferred action's probability nonetheless stays below 0.99,
/// 3. the likelihood loss of that same distribution stays above 0.01, and
/// 4. the likelihood run pushes the preferred action above `1 - tolerance`.
pub fn verify_counterexample_with(
    reference: [f64; 3],
    pair: (usize, usize),
    beta: f64,
    tolerance: f64,
) -> Result<CounterexampleReport> {
    validate_distribution(&reference)?;
    validate_pair(pair)?;
    let beta_valid = beta.is_finite() && beta > 0.0;
    if !beta_valid {
        return Err(Error::input("beta must be positive"));
    }
    let tol_valid = tolerance.is_finite() && tolerance > 0.0 && tolerance < 0.5;
    if !tol_valid {
        return Err(Error::input("tolerance must be in (0, 0.5)"));
    }
    let (plus, minus) = pair;

    // Pairwise side: chunked descent from the reference until the
    // certificate holds or the step budget runs out. Small chunks keep the
    // stopping point close to the threshold at any temperature.
    let chunk = 10;
    let max_steps = 400_000;
    let mut dpo_dist = reference;
    let mut dpo_steps = 0;
    while pairwise_ratio(&reference, pair, &dpo_dist) >= tolerance && dpo_steps < max_steps {
        let out = optimize_simplex(
            SimplexLoss::Dpo,
            reference,
            pair,
            dpo_dist,
            beta,
            chunk,
            0.5,
        )?;
        dpo_dist = out.distribution;
        dpo_steps += chunk;
    }
    let dpo_ratio = pairwise_ratio(&reference, pair, &dpo_dist);
    let dpo_loss = simplex_loss(SimplexLoss::Dpo, &reference, pair, &dpo_dist, beta);
    let sft_loss_at_dpo = -dpo_dist[plus].ln();

    // Likelihood side: chunked descent from uniform until the preferred
    // action clears the bar with margin.
    let uniform = [1.0 / 3.0; 3];
    let mut sft_dist = uniform;
    let mut sft_steps = 0;
    while sft_dist[plus] <= 1.0 - tolerance / 2.0 && sft_steps < max_steps {
        let out = optimize_simplex(
            SimplexLoss::Sft,
            reference,
            pair,
            sft_dist,
            beta,
            chunk,
            2.0,
        )?;
        sft_dist = out.distribution;
        sft_steps += chunk;
    }
    let sft_loss = -sft_dist[plus].ln();

    let clauses = vec![
        (
            "dpo_near_optimal: ratio < tolerance and pi(y-) < tolerance".to_string(),
            dpo_ratio < tolerance && dpo_dist[minus] < tolerance,
        ),
        (
            "dpo_preferred_below_one: pi(y+) < 0.99 at the pairwise optimum".to_string(),
            dpo_dist[plus] < 0.99,
        ),
        (
            "sft_gap_at_dpo_optimum: likelihood loss > 0.01 there".to_string(),
            sft_loss_at_dpo > 0.01,
        ),
        (
            "sft_reaches_preferred: pi(y+) > 1 - tolerance".to_string(),
            sft_dist[plus] > 1.0 - tolerance,
        ),
    ];
    let pass = clauses.iter().all(|(_, ok)| *ok);
    Ok(CounterexampleReport {
        beta,
        tolerance,
        reference,
        pair,
        dpo: OptimizationSummary {
            distribution: dpo_dist,
            loss: dpo_loss,
            steps_run: dpo_steps,
        },
        dpo_ratio,
        dpo_loss_unit_beta: dpo_ratio.ln_1p(),
        sft_loss_at_dpo_optimum: sft_loss_at_dpo,
        sft: OptimizationSummary {
            distribution: sft_dist,
            loss: sft_loss,
            steps_run: sft_steps,
        },
        clauses,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sft_descent_reaches_the_preferred_vertex() {
        let out = optimize_simplex(
            SimplexLoss::Sft,
            CANONICAL_REFERENCE,
            CANONICAL_PAIR,
            [1.0 / 3.0; 3],
            1.0,
            4000,
            2.0,
        )
        .unwrap();
        let d = out.distribution;
        assert!((d[0] - 1.0).abs() < 1e-3, "d = {d:?}");
        assert!(d[1] < 1e-3 && d[2] < 1e-3, "d = {d:?}");
    }

    #[test]
    fn dpo_descent_kills_dispreferred_without_saturating_preferred() {
        let report = verify_counterexample(1.0, 1e-3).unwrap();
        let d = report.dpo.distribution;
        assert!(d[1] < 1e-3, "pi(y-) = {}", d[1]);
        assert!(d[0] < 0.99, "pi(y+) = {}", d[0]);
        assert!(report.dpo.loss < 1e-3, "loss = {}", report.dpo.loss);
        assert!(report.pass, "failed: {:?}", report.failed_clauses());
    }

    #[test]
    fn near_optimal_init_is_already_stationary() {
        let init = [0.2 - 0.5e-9, 1e-9, 0.8 - 0.5e-9];
        let out = optimize_simplex(
            SimplexLoss::Dpo,
            CANONICAL_REFERENCE,
            CANONICAL_PAIR,
            init,
            1.0,
            1,
            0.5,
        )
        .unwrap();
        assert!(out.loss < 1e-6, "loss = {}", out.loss);
        assert!(out.gradient_norm < 1e-4, "gnorm = {}", out.gradient_norm);
    }

    #[test]
    fn degenerate_reference_is_rejected() {
        assert!(verify_counterexample_with([0.5, 0.0, 0.5], (0, 1), 1.0, 1e-3).is_err());
        assert!(optimize_simplex(
            SimplexLoss::Dpo,
            [0.5, 0.0, 0.5],
            (0, 1),
            [1.0 / 3.0; 3],
            1.0,
            10,
            0.5
        )
        .is_err());
        assert!(verify_counterexample_with(CANONICAL_REFERENCE, (1, 1), 1.0, 1e-3).is_err());
    }

    #[test]
    fn verification_holds_at_both_temperatures() {
        for beta in [0.1, 1.0] {
            let report = verify_counterexample(beta, 1e-3).unwrap();
            assert!(
                report.pass,
                "beta {beta}: failed {:?}",
                report.failed_clauses()
            );
            assert!(report.dpo_loss_unit_beta < 1e-3);
        }
    }

    #[test]
    fn pairwise_loss_ignores_mass_moved_to_the_spectator_action() {
        // Adding mass to the non-pair action while rescaling the pair by a
        // common factor leaves the log-ratio unchanged.
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            rng_state = crate::math::splitmix64(rng_state);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let raw = [next() + 0.05, next() + 0.05, next() + 0.05];
            let s: f64 = raw.iter().sum();
            let dist = [raw[0] / s, raw[1] / s, raw[2] / s];
            let delta = 0.5 * dist[2].min(1.0 - dist[2]) * next();
            let scale = (1.0 - dist[2] - delta) / (dist[0] + dist[1]);
            let moved = [dist[0] * scale, dist[1] * scale, dist[2] + delta];
            let beta = 0.1 + 2.0 * next();
            let a = simplex_loss(SimplexLoss::Dpo, &CANONICAL_REFERENCE, (0, 1), &dist, beta);
            let b = simplex_loss(SimplexLoss::Dpo, &CANONICAL_REFERENCE, (0, 1), &moved, beta);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_loss_point_with_low_preferred_probability_exists() {
        // The distribution from the three-action table, nudged off the
        // boundary: the pairwise loss is already indistinguishable from 0
        // while the preferred action holds only 0.2.
        let dist = [0.2, 1e-12, 0.8 - 1e-12];
        let loss = simplex_loss(SimplexLoss::Dpo, &CANONICAL_REFERENCE, (0, 1), &dist, 1.0);
        assert!(loss < 1e-9, "loss = {loss}");
    }
}
