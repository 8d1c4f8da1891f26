//! Preference-aware pass@k estimators and rate metrics.
//!
//! For a problem with `n` sampled solutions of which `c_p` pass all tests
//! *and* satisfy the preference criterion, the probability that a random
//! k-subset contains at least one such solution is `1 - C(n-c_p, k)/C(n, k)`.
//! It is evaluated through the stable product `prod_i (n-c_p-i)/(n-i)`; any
//! nonpositive numerator collapses the product to zero (the metric is then
//! exactly one). Substituting the plain pass count for `c_p` recovers the
//! ordinary pass@k.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-problem sampling outcome. Solutions are pre-judged: `pass_count`
/// passed all tests, and `c_p` of those also satisfy the preference
/// criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub n: u64,
    pub pass_count: u64,
    pub c_p: u64,
}

impl ProblemOutcome {
    pub fn new(n: u64, pass_count: u64, c_p: u64) -> Result<Self> {
        let o = ProblemOutcome { n, pass_count, c_p };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_p <= self.pass_count && self.pass_count <= self.n) {
            return Err(Error::input(format!(
                "outcome must satisfy c_p <= pass_count <= n, got ({}, {}, {})",
                self.c_p, self.pass_count, self.n
            )));
        }
        Ok(())
    }
}

fn at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::input(format!("k must be in 1..={n}, got {k}")));
    }
    let mut acc = 1.0f64;
    for i in 0..k {
        let numerator = n as i64 - c as i64 - i as i64;
        if numerator <= 0 {
            acc = 0.0;
            break;
        }
        acc *= numerator as f64 / (n - i) as f64;
    }
    Ok(1.0 - acc)
}

/// Probability that at least one of k sampled solutions both passes all
/// tests and satisfies the preference criterion. In [0, 1].
pub fn preference_at_k(outcome: &ProblemOutcome, k: u64) -> Result<f64> {
    outcome.validate()?;
    at_k(outcome.n, outcome.c_p, k)
}

/// Plain pass@k: the same estimator with the preference criterion dropped.
pub fn pass_at_k(outcome: &ProblemOutcome, k: u64) -> Result<f64> {
    outcome.validate()?;
    at_k(outcome.n, outcome.pass_count, k)
}

/// Mean of the per-problem estimator over a nonempty outcome list.
pub fn preference_at_k_mean(outcomes: &[ProblemOutcome], k: u64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::input("outcome list must be nonempty"));
    }
    let mut total = 0.0;
    for o in outcomes {
        total += preference_at_k(o, k)?;
    }
    Ok(total / outcomes.len() as f64)
}

/// How the rate pools across problems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Pooled counts: sum(c_p) / sum(pass_count). Default.
    #[default]
    Micro,
    /// Mean of per-problem rates over problems with at least one pass.
    Macro,
}

/// A rate can be genuinely undefined (no passing solutions anywhere); that
/// is a distinct signal, not a zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RateOutcome {
    Defined(f64),
    Undefined,
}

impl RateOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            RateOutcome::Defined(v) => Some(*v),
            RateOutcome::Undefined => None,
        }
    }
}

/// Proportion of all-tests-passing solutions that also satisfy the
/// preference criterion.
pub fn preference_rate(
    outcomes: &[ProblemOutcome],
    aggregation: Aggregation,
) -> Result<RateOutcome> {
    if outcomes.is_empty() {
        return Err(Error::input("outcome list must be nonempty"));
    }
    for o in outcomes {
        o.validate()?;
    }
    match aggregation {
        Aggregation::Micro => {
            let pass: u64 = outcomes.iter().map(|o| o.pass_count).sum();
            if pass == 0 {
                return Ok(RateOutcome::Undefined);
            }
            let pref: u64 = outcomes.iter().map(|o| o.c_p).sum();
            Ok(RateOutcome::Defined(pref as f64 / pass as f64))
        }
        Aggregation::Macro => {
            let mut total = 0.0;
            let mut counted = 0usize;
            for o in outcomes {
                if o.pass_count > 0 {
                    total += o.c_p as f64 / o.pass_count as f64;
                    counted += 1;
                }
            }
            if counted == 0 {
                return Ok(RateOutcome::Undefined);
            }
            Ok(RateOutcome::Defined(total / counted as f64))
        }
    }
}

/// Read outcomes from JSON lines, one `{n, pass_count, c_p}` record per
/// line.
pub fn read_outcomes_jsonl(path: &Path) -> Result<Vec<ProblemOutcome>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut outcomes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let o: ProblemOutcome = serde_json::from_str(line)
            .map_err(|e| Error::schema(format!("outcome line {i}: {e}")))?;
        o.validate()?;
        outcomes.push(o);
    }
    if outcomes.is_empty() {
        return Err(Error::input("outcome file holds no records"));
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(n: u64, pass: u64, cp: u64) -> ProblemOutcome {
        ProblemOutcome::new(n, pass, cp).unwrap()
    }

    #[test]
    fn outcome_ordering_is_enforced() {
        assert!(ProblemOutcome::new(5, 3, 4).is_err());
        assert!(ProblemOutcome::new(5, 6, 1).is_err());
        assert!(ProblemOutcome::new(5, 5, 5).is_ok());
    }

    #[test]
    fn endpoints() {
        assert_eq!(preference_at_k(&o(10, 5, 0), 3).unwrap(), 0.0);
        assert_eq!(preference_at_k(&o(10, 10, 10), 1).unwrap(), 1.0);
    }

    #[test]
    fn five_choose_three_with_two_preferred() {
        // Of the C(5,3) = 10 subsets exactly one avoids both preferred
        // solutions, so the estimator is 0.9 exactly.
        let v = preference_at_k(&o(5, 4, 2), 3).unwrap();
        assert_eq!(v, 0.9);
    }

    #[test]
    fn short_supply_forces_certainty() {
        // n - c_p < k means every k-subset hits a preferred solution.
        for (n, cp, k) in [(5u64, 4u64, 3u64), (6, 5, 2), (4, 4, 1)] {
            assert_eq!(preference_at_k(&o(n, cp, cp), k).unwrap(), 1.0);
        }
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        assert!(preference_at_k(&o(5, 4, 2), 0).is_err());
        assert!(preference_at_k(&o(5, 4, 2), 6).is_err());
    }

    #[test]
    fn mean_is_arithmetic() {
        let outcomes = [o(4, 4, 0), o(4, 4, 4)];
        assert_eq!(preference_at_k_mean(&outcomes, 2).unwrap(), 0.5);
        let same = [o(6, 5, 2); 3];
        let single = preference_at_k(&same[0], 2).unwrap();
        assert_eq!(preference_at_k_mean(&same, 2).unwrap(), single);
        assert!(preference_at_k_mean(&[], 1).is_err());
    }

    #[test]
    fn monotone_in_preferred_count_and_k() {
        let n = 12;
        for k in 1..=n {
            let mut prev = -1.0;
            for cp in 0..=n {
                let v = at_k(n, cp, k).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
        for cp in 0..=n {
            let mut prev = -1.0;
            for k in 1..=n {
                let v = at_k(n, cp, k).unwrap();
                assert!(v >= prev - 1e-15, "cp {cp} k {k}: {v} < {prev}");
                prev = v;
            }
        }
    }

    #[test]
    fn preference_never_exceeds_pass() {
        for n in 1..=10u64 {
            for pass in 0..=n {
                for cp in 0..=pass {
                    for k in 1..=n {
                        let outcome = o(n, pass, cp);
                        let pref = preference_at_k(&outcome, k).unwrap();
                        let pass_v = pass_at_k(&outcome, k).unwrap();
                        assert!(pref <= pass_v + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn rates_pool_and_average() {
        let outcomes = [o(8, 4, 3), o(4, 1, 0)];
        assert_eq!(
            preference_rate(&outcomes, Aggregation::Micro).unwrap(),
            RateOutcome::Defined(0.6)
        );
        let macro_rate = preference_rate(&outcomes, Aggregation::Macro).unwrap();
        assert_eq!(macro_rate, RateOutcome::Defined((0.75 + 0.0) / 2.0));

        let all_pref = [o(3, 2, 2), o(3, 1, 1)];
        assert_eq!(
            preference_rate(&all_pref, Aggregation::Micro).unwrap(),
            RateOutcome::Defined(1.0)
        );
        let none = [o(3, 2, 0), o(3, 1, 0)];
        assert_eq!(
            preference_rate(&none, Aggregation::Micro).unwrap(),
            RateOutcome::Defined(0.0)
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // The estimator is a probability, monotone in the preferred
            // count, and bounded by the plain pass variant.
            #[test]
            fn estimator_bounds((n, pass, cp, k) in (1u64..=40).prop_flat_map(|n| {
                (Just(n), 0..=n).prop_flat_map(move |(n, pass)| {
                    (Just(n), Just(pass), 0..=pass, 1..=n)
                })
            })) {
                let outcome = ProblemOutcome::new(n, pass, cp).unwrap();
                let v = preference_at_k(&outcome, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(v <= pass_at_k(&outcome, k).unwrap() + 1e-15);
                if cp < pass {
                    let bumped = ProblemOutcome::new(n, pass, cp + 1).unwrap();
                    prop_assert!(preference_at_k(&bumped, k).unwrap() + 1e-15 >= v);
                }
                if n.saturating_sub(cp) < k {
                    prop_assert_eq!(v, 1.0);
                }
            }
        }
    }

    #[test]
    fn zero_passes_is_undefined_not_zero() {
        let outcomes = [o(5, 0, 0), o(7, 0, 0)];
        assert_eq!(
            preference_rate(&outcomes, Aggregation::Micro).unwrap(),
            RateOutcome::Undefined
        );
        assert_eq!(
            preference_rate(&outcomes, Aggregation::Macro).unwrap(),
            RateOutcome::Undefined
        );
    }
}
