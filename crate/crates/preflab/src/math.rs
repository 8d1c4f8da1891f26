//! Small numeric helpers shared across the crate.

/// Numerically stable `log(1 + exp(x))`.
///
/// The naive form overflows for large positive `x`; this one never does.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable log-sum-exp over a slice. Empty input yields negative infinity.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + sum.ln()
}

/// One SplitMix64 output for the given state.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a labeled sub-seed from a master seed.
///
/// Every source of randomness in a run fans out from the run seed through
/// this function, so individual components (dataset, init, shuffle) can be
/// reproduced in isolation.
pub fn sub_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed through SplitMix64.
    let mut h = 0xcbf29ce484222325u64;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(master ^ h)
}
